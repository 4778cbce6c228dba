"""Minimal differentiable numeric kernel over float64 numpy arrays.

Each operation returns its output together with a backward closure that
accumulates exact gradients into the ParamTensors it touched and returns the
gradient with respect to its input. There is no tape: composite modules call
the closures in reverse order themselves. Gradients accumulate (backward
adds into .grad), so callers zero them between steps; this is what lets
multi-term losses sum their contributions.

All math is 64-bit. Inputs may carry leading batch dimensions; the
single-sample shapes documented below are the contractual minimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .rng import RngStream


@dataclass
class ParamTensor:
    """A trainable array paired with its gradient accumulator."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    name: str = ""

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        else:
            self.grad = np.asarray(self.grad, dtype=np.float64)
            if self.grad.shape != self.value.shape:
                raise InputError(
                    f"grad shape {self.grad.shape} != value shape {self.value.shape}"
                )

    @property
    def shape(self):
        return self.value.shape


def zero_grads(params) -> None:
    for p in params:
        p.grad[...] = 0.0


def xavier_init(shape, rng: RngStream, name: str = "") -> ParamTensor:
    """Normal init scaled by sqrt(2 / (fan_in + fan_out))."""
    fan_out, fan_in = shape[0], int(np.prod(shape[1:])) if len(shape) > 1 else 1
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return ParamTensor(rng.normal(shape, scale=scale), name=name)


def zeros_init(shape, name: str = "") -> ParamTensor:
    return ParamTensor(np.zeros(shape), name=name)


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise InputError(f"{what} contains non-finite values")


def linear(x: np.ndarray, W: ParamTensor, b: ParamTensor):
    """y = W x + b over the last axis of x; returns (y, backward)."""
    x = np.asarray(x, dtype=np.float64)
    n_out, n_in = W.value.shape
    if x.shape[-1] != n_in:
        raise InputError(f"linear expects input width {n_in}, got {x.shape[-1]}")
    if b.value.shape != (n_out,):
        raise InputError(f"bias shape {b.value.shape} != ({n_out},)")
    y = x @ W.value.T + b.value

    def backward(dy: np.ndarray) -> np.ndarray:
        dy = np.asarray(dy, dtype=np.float64)
        dy2 = dy.reshape(-1, n_out)
        x2 = x.reshape(-1, n_in)
        W.grad += dy2.T @ x2
        b.grad += dy2.sum(axis=0)
        return (dy2 @ W.value).reshape(x.shape)

    return y, backward


def channel_map_1x1(x: np.ndarray, W: ParamTensor, b: ParamTensor):
    """Per-position linear map over channels, shared across the spatial grid.

    x has shape (..., C_in, H, W); the same (C_out, C_in) map plus bias is
    applied at every spatial position.
    """
    x = np.asarray(x, dtype=np.float64)
    c_out, c_in = W.value.shape
    if x.ndim < 3 or x.shape[-3] != c_in:
        raise InputError(
            f"channel_map_1x1 expects (..., {c_in}, H, W), got {x.shape}"
        )
    if b.value.shape != (c_out,):
        raise InputError(f"bias shape {b.value.shape} != ({c_out},)")
    y = np.einsum("oc,...chw->...ohw", W.value, x) + b.value[:, None, None]

    def backward(dy: np.ndarray) -> np.ndarray:
        dy = np.asarray(dy, dtype=np.float64)
        d4 = dy.reshape(-1, c_out, *dy.shape[-2:])
        x4 = x.reshape(-1, c_in, *x.shape[-2:])
        W.grad += np.einsum("nohw,nchw->oc", d4, x4)
        b.grad += d4.sum(axis=(0, 2, 3))
        return np.einsum("oc,...ohw->...chw", W.value, dy)

    return y, backward


def leaky_relu(x: np.ndarray, slope: float = 0.01):
    """max(x, slope * x); identity for x >= 0, slope * x below zero."""
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    y = np.where(pos, x, slope * x)

    def backward(dy: np.ndarray) -> np.ndarray:
        return np.where(pos, dy, slope * dy)

    return y, backward


def dropout(x: np.ndarray, ratio: float, rng: RngStream, training: bool):
    """Zero each element with probability `ratio`, scaling survivors.

    Inference (training=False) or ratio=0 is the identity and draws nothing
    from the stream.
    """
    if not 0.0 <= ratio < 1.0:
        raise InputError(f"dropout ratio must be in [0, 1), got {ratio}")
    x = np.asarray(x, dtype=np.float64)
    if not training or ratio == 0.0:
        return x, lambda dy: np.asarray(dy, dtype=np.float64)
    keep = rng.uniform(x.shape) >= ratio
    scale = 1.0 / (1.0 - ratio)
    factor = keep * scale
    y = x * factor

    def backward(dy: np.ndarray) -> np.ndarray:
        return np.asarray(dy, dtype=np.float64) * factor

    return y, backward


def softmax(z: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Temperature softmax over the last axis, stabilized by max-subtraction."""
    if tau <= 0:
        raise InputError(f"softmax temperature must be positive, got {tau}")
    z = np.asarray(z, dtype=np.float64) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, y, weights=None):
    """Summed cross-entropy of integer labels, optionally per-sample weighted.

    logits is (K,) or (N, K); y is an int or an (N,) int array. Returns
    (loss, backward) where backward() takes the upstream scalar gradient and
    returns dlogits = weight * (softmax - onehot) per sample.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    l2 = logits.reshape(1, -1) if single else logits
    n, k = l2.shape
    ys = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if ys.shape != (n,):
        raise InputError(f"labels shape {ys.shape} does not match {n} samples")
    if np.any(ys < 0) or np.any(ys >= k):
        raise InputError(f"class index out of range [0, {k})")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise InputError(f"weights shape {w.shape} does not match {n} samples")
    p = softmax(l2)
    losses = -np.log(p[np.arange(n), ys])
    loss = float(np.sum(w * losses))

    def backward(dloss: float = 1.0) -> np.ndarray:
        d = p.copy()
        d[np.arange(n), ys] -= 1.0
        d *= (dloss * w)[:, None]
        return d.reshape(logits.shape)

    return loss, backward


def smooth_l1(pred: np.ndarray, target: np.ndarray):
    """Huber-style loss summed over elements: 0.5 d^2 inside |d| < 1, |d| - 0.5 outside."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InputError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    small = np.abs(d) < 1.0
    loss = float(np.sum(np.where(small, 0.5 * d * d, np.abs(d) - 0.5)))

    def backward(dloss: float = 1.0) -> np.ndarray:
        return dloss * np.where(small, d, np.sign(d))

    return loss, backward


def sgd_step(params, lr: float, weight_decay: float = 0.0, momentum: float = 0.0,
             momentum_buffers: dict | None = None) -> None:
    """value <- value - lr * (grad + weight_decay * value); grads untouched.

    Momentum defaults to 0; pass a dict to carry velocity between steps when
    it is enabled.
    """
    for p in params:
        g = p.grad + weight_decay * p.value
        if momentum != 0.0:
            if momentum_buffers is None:
                raise InputError("momentum > 0 requires momentum_buffers")
            buf = momentum_buffers.get(id(p))
            buf = g.copy() if buf is None else momentum * buf + g
            momentum_buffers[id(p)] = buf
            g = buf
        p.value -= lr * g


def finite_diff_check(f, params, h: float = 1e-4, max_coords: int | None = None,
                      rng: RngStream | None = None) -> float:
    """Max relative error between stored analytic grads and central differences.

    `f` must be a pure forward evaluation (no grad side effects); the caller
    runs forward + backward once beforehand so that params carry the analytic
    gradients. For tensors larger than max_coords, a random subset of
    coordinates is probed.
    """
    worst = 0.0
    for p in params:
        flat_v = p.value.reshape(-1)
        flat_g = p.grad.reshape(-1)
        idxs = np.arange(flat_v.size)
        if max_coords is not None and flat_v.size > max_coords:
            if rng is None:
                raise InputError("sampled finite differences need an RngStream")
            idxs = rng.permutation(flat_v.size)[:max_coords]
        for i in idxs:
            orig = flat_v[i]
            flat_v[i] = orig + h
            f_plus = f()
            flat_v[i] = orig - h
            f_minus = f()
            flat_v[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = flat_g[i]
            denom = max(abs(numeric), abs(analytic), 1e-3)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
