"""Exact geometry for oriented (rotated) rectangles.

Boxes are (cx, cy, w, h, theta) with theta measured counter-clockwise from
the +x axis to the w-edge, in radians, normalized to [-pi/2, pi/2). All
polygon math is done in plain float arithmetic: convex clipping against each
half-plane of the clip quad, then the shoelace formula. Exact for convex
quads, no geometry dependency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

# vertices closer than this are snapped together before area computation
_SNAP_EPS = 1e-9


def normalize_angle(theta: float) -> float:
    """Fold an angle into [-pi/2, pi/2); rectangles repeat every half turn."""
    return (theta + math.pi / 2.0) % math.pi - math.pi / 2.0


@dataclass(frozen=True)
class RotatedBox:
    """Oriented rectangle; w and h must be positive, theta is normalized."""

    cx: float
    cy: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h", "theta"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InputError(f"RotatedBox.{name} must be finite, got {v!r}")
        if self.w <= 0 or self.h <= 0:
            raise InputError(f"RotatedBox needs w, h > 0, got w={self.w}, h={self.h}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h, self.theta)


@dataclass(frozen=True)
class ConvexPolygon:
    """Counter-clockwise convex loop; signed area is non-negative."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise InputError("ConvexPolygon needs at least 3 vertices")
        if _signed_area(self.vertices) < -_SNAP_EPS:
            raise InputError("ConvexPolygon vertices must wind counter-clockwise")

    @property
    def area(self) -> float:
        return max(_signed_area(self.vertices), 0.0)


def _signed_area(vertices) -> float:
    acc = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def _corner_points(box: RotatedBox) -> list[tuple[float, float]]:
    c, s = math.cos(box.theta), math.sin(box.theta)
    hw, hh = 0.5 * box.w, 0.5 * box.h
    # counter-clockwise in standard (y-up) orientation
    pts = []
    for dx, dy in ((hw, hh), (-hw, hh), (-hw, -hh), (hw, -hh)):
        pts.append((box.cx + c * dx - s * dy, box.cy + s * dx + c * dy))
    return pts


def corners(box: RotatedBox) -> ConvexPolygon:
    """Four corners of the box, counter-clockwise around (cx, cy)."""
    return ConvexPolygon(tuple(_corner_points(box)))


def _snap(points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Drop consecutive near-duplicate vertices (within _SNAP_EPS)."""
    if not points:
        return points
    out = [points[0]]
    for p in points[1:]:
        q = out[-1]
        if abs(p[0] - q[0]) > _SNAP_EPS or abs(p[1] - q[1]) > _SNAP_EPS:
            out.append(p)
    while len(out) > 1 and (
        abs(out[0][0] - out[-1][0]) <= _SNAP_EPS
        and abs(out[0][1] - out[-1][1]) <= _SNAP_EPS
    ):
        out.pop()
    return out


def _clip_halfplane(points, ax, ay, bx, by):
    """Keep the part of `points` on or left of the directed line a->b."""
    ex, ey = bx - ax, by - ay
    out = []
    n = len(points)
    for i in range(n):
        sx, sy = points[i - 1]
        px, py = points[i]
        s_in = ex * (sy - ay) - ey * (sx - ax) >= 0.0
        p_in = ex * (py - ay) - ey * (px - ax) >= 0.0
        if p_in != s_in:
            dx, dy = px - sx, py - sy
            den = ex * dy - ey * dx
            if den != 0.0:
                t = (ex * (ay - sy) - ey * (ax - sx)) / den
                out.append((sx + t * dx, sy + t * dy))
        if p_in:
            out.append((px, py))
    return out


def _clip_convex(subject, clip):
    pts = list(subject)
    n = len(clip)
    for i in range(n):
        if not pts:
            return []
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        pts = _clip_halfplane(pts, ax, ay, bx, by)
    return pts


def intersection_area(a: ConvexPolygon, b: ConvexPolygon) -> float:
    """Area of the intersection of two convex polygons."""
    clipped = _snap(_clip_convex(a.vertices, b.vertices))
    if len(clipped) < 3:
        return 0.0
    return max(_signed_area(clipped), 0.0)


def _circumradius(box: RotatedBox) -> float:
    return 0.5 * math.hypot(box.w, box.h)


def rotated_iou(a: RotatedBox, b: RotatedBox) -> float:
    """Intersection over union of two rotated boxes, in [0, 1]."""
    # boxes whose circumscribed circles do not touch cannot intersect
    if math.hypot(a.cx - b.cx, a.cy - b.cy) >= _circumradius(a) + _circumradius(b):
        return 0.0
    inter = intersection_area(corners(a), corners(b))
    # roundoff can push the clipped area a hair past the exact bound
    inter = min(inter, a.area, b.area)
    union = a.area + b.area - inter
    return inter / union


def nms(
    boxes: list[RotatedBox],
    scores: list[float],
    iou_thr: float,
    score_thr: float = 0.0,
) -> list[int]:
    """Greedy non-maximum suppression with rotated IoU.

    Returns kept indices in descending score order (ties keep the lower
    index first). A candidate is suppressed when its IoU with any already
    kept box is >= iou_thr; boxes scoring below score_thr never survive.
    """
    if len(boxes) != len(scores):
        raise InputError(
            f"nms needs matching lengths, got {len(boxes)} boxes, {len(scores)} scores"
        )
    if not 0.0 < iou_thr <= 1.0:
        raise InputError(f"iou_thr must be in (0, 1], got {iou_thr}")
    order = sorted(
        (i for i in range(len(boxes)) if scores[i] >= score_thr),
        key=lambda i: (-scores[i], i),
    )
    kept: list[int] = []
    for i in order:
        if all(rotated_iou(boxes[i], boxes[k]) < iou_thr for k in kept):
            kept.append(i)
    return kept


def diag_len(image_w: float, image_h: float) -> float:
    """Diagonal length of an image, used to normalize spatial distances."""
    if image_w <= 0 or image_h <= 0:
        raise InputError(
            f"image dimensions must be positive, got {image_w} x {image_h}"
        )
    return math.hypot(image_w, image_h)


def boxes_to_array(boxes) -> np.ndarray:
    """Stack boxes into an (n, 5) float array of (cx, cy, w, h, theta)."""
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64).reshape(-1, 5)
