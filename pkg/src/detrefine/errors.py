"""Exception types shared across the package.

The CLI maps InputError to exit code 1 and InternalError (or any other
unexpected exception) to exit code 2.
"""


class InputError(ValueError):
    """Caller-supplied data or configuration is invalid."""


class InternalError(RuntimeError):
    """An internal invariant was violated; indicates a bug, not bad input."""
