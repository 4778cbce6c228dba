"""Annotation box conversions into the engine's rotated-box convention."""

from __future__ import annotations

from detrefine import InputError, RotatedBox


def aligned_to_rotated(x1: float, y1: float, x2: float, y2: float) -> RotatedBox:
    """Axis-aligned (x1, y1, x2, y2) to (cx, cy, w, h, 0)."""
    if x2 <= x1 or y2 <= y1:
        raise InputError(f"degenerate axis-aligned box ({x1}, {y1}, {x2}, {y2})")
    return RotatedBox(0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1, 0.0)


def annotation_to_box(obj: dict) -> RotatedBox:
    """One annotation object to a RotatedBox.

    Accepts {"bbox": [x1, y1, x2, y2]} or {"rbox": [cx, cy, w, h, theta]};
    angles are normalized by the RotatedBox constructor.
    """
    if "rbox" in obj:
        vals = obj["rbox"]
        if len(vals) != 5:
            raise InputError(f"rbox needs 5 values, got {vals!r}")
        return RotatedBox(*[float(v) for v in vals])
    if "bbox" in obj:
        vals = obj["bbox"]
        if len(vals) != 4:
            raise InputError(f"bbox needs 4 values, got {vals!r}")
        return aligned_to_rotated(*[float(v) for v in vals])
    raise InputError(f"annotation object has neither bbox nor rbox: {obj!r}")
