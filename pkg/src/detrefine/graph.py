"""Directed certain-to-uncertain object graph construction.

Survivors are ranked by uncertainty; the more certain half become source
nodes and the rest targets, and edges only ever point source -> target. A
pair is connected when its box centers are closer than the spatial
threshold or its pooled features are closer than the semantic threshold.

Semantic thresholding happens on per-scene standardized features (zero
mean, unit variance over all retained survivor feature entries). Only the
variance matters for distances, but standardizing makes one threshold
constant portable across feature scales. Edge weights follow the spatial
formula in both cases: reciprocal of (center distance x image diagonal) by
default, with the diagonal/distance normalization selectable instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, InternalError
from .records import Proposal

# zero spatial distances are clamped to this before entering weight formulas
WEIGHT_DIST_EPS = 1e-6

WEIGHT_MODES = ("reciprocal_product", "diag_over_dist")


@dataclass(frozen=True)
class GraphEdge:
    src: int
    dst: int
    weight: float
    spatial_dist: float
    semantic_dist: float


@dataclass(frozen=True)
class ObjectGraph:
    """Directed bipartite graph over proposal ids."""

    src_ids: tuple[int, ...]
    dst_ids: tuple[int, ...]
    edges: tuple[GraphEdge, ...]

    def node_ids(self) -> list[int]:
        return list(self.src_ids) + list(self.dst_ids)

    def validate(self) -> "ObjectGraph":
        src, dst = set(self.src_ids), set(self.dst_ids)
        if src & dst:
            raise InternalError("source and target node sets overlap")
        for e in self.edges:
            if e.src not in src or e.dst not in dst:
                raise InternalError(f"edge {e.src}->{e.dst} violates direction")
            if not (e.weight > 0 and math.isfinite(e.weight)):
                raise InternalError(f"edge {e.src}->{e.dst} has weight {e.weight}")
        if len(self.edges) > len(src) * len(dst):
            raise InternalError("more edges than source x target pairs")
        return self


def split_by_uncertainty(survivors: list[Proposal], cap: int = 100):
    """Rank by uncertainty and split: certain half sources, rest targets.

    Ties rank by ascending id. When more than `cap` survivors exist, only
    the `cap` most certain are retained and the rest are discarded outright.
    The first ceil(n/2) retained become sources.
    """
    if cap < 1:
        raise InputError(f"cap must be positive, got {cap}")
    for prop in survivors:
        if prop.uncertainty is None:
            raise InputError(f"proposal {prop.id} has no uncertainty")
    ranked = sorted(survivors, key=lambda p: (p.uncertainty, p.id))[:cap]
    n_src = (len(ranked) + 1) // 2
    return ranked[:n_src], ranked[n_src:]


def spatial_distance(a: Proposal, b: Proposal) -> float:
    """Euclidean distance between box centers, in pixels."""
    return math.hypot(a.box.cx - b.box.cx, a.box.cy - b.box.cy)


def semantic_distance(a: Proposal, b: Proposal) -> float:
    """Euclidean norm of the flattened feature difference."""
    if a.features.shape != b.features.shape:
        raise InputError(
            f"feature shapes differ: {a.features.shape} vs {b.features.shape}"
        )
    return float(np.sqrt(np.sum((a.features - b.features) ** 2)))


def edge_weight(spatial_dist: float, image_diag: float,
                mode: str = "reciprocal_product") -> float:
    d = max(spatial_dist, WEIGHT_DIST_EPS)
    if mode == "reciprocal_product":
        return 1.0 / (d * image_diag)
    if mode == "diag_over_dist":
        return image_diag / d
    raise InputError(f"unknown edge weight mode {mode!r}")


def feature_scale(proposals: list[Proposal]) -> float:
    """Std of all retained feature entries; the semantic normalizer."""
    if not proposals:
        return 1.0
    flat = np.concatenate([p.features.reshape(-1) for p in proposals])
    return max(float(flat.std()), 1e-12)


def build_graph(v_src: list[Proposal], v_dst: list[Proposal], spatial_thr: float,
                semantic_thr: float, image_diag: float,
                weight_mode: str = "reciprocal_product") -> ObjectGraph:
    """Connect each (source, target) pair that is spatially or semantically close.

    A pair satisfying both criteria still yields a single edge. Edges are
    returned sorted by (src, dst), so construction order never shows.
    """
    if weight_mode not in WEIGHT_MODES:
        raise InputError(f"unknown edge weight mode {weight_mode!r}")
    if image_diag <= 0:
        raise InputError(f"image diagonal must be positive, got {image_diag}")
    scale = feature_scale(v_src + v_dst)
    edges = []
    if v_src and v_dst:
        for d in v_dst:
            if d.features.shape != v_src[0].features.shape:
                raise InputError(
                    f"feature shapes differ: {v_src[0].features.shape} "
                    f"vs {d.features.shape}"
                )
        # vectorized pairwise distances; the last-axis reduction and hypot
        # match the per-pair operations bit for bit
        src_xy = np.array([(p.box.cx, p.box.cy) for p in v_src])
        dst_xy = np.array([(p.box.cx, p.box.cy) for p in v_dst])
        d_spa = np.hypot(src_xy[:, None, 0] - dst_xy[None, :, 0],
                         src_xy[:, None, 1] - dst_xy[None, :, 1])
        src_f = np.stack([p.features.reshape(-1) for p in v_src])
        dst_f = np.stack([p.features.reshape(-1) for p in v_dst])
        diff = src_f[:, None, :] - dst_f[None, :, :]
        d_sem = np.sqrt(np.sum(diff * diff, axis=-1)) / scale
        keep = (d_spa < spatial_thr) | (d_sem < semantic_thr)
        for i, j in zip(*np.nonzero(keep)):
            edges.append(GraphEdge(
                src=v_src[i].id, dst=v_dst[j].id,
                weight=edge_weight(float(d_spa[i, j]), image_diag, weight_mode),
                spatial_dist=float(d_spa[i, j]), semantic_dist=float(d_sem[i, j]),
            ))
    edges.sort(key=lambda e: (e.src, e.dst))
    return ObjectGraph(
        src_ids=tuple(p.id for p in v_src),
        dst_ids=tuple(p.id for p in v_dst),
        edges=tuple(edges),
    ).validate()


def format_graph_dump(graph: ObjectGraph) -> str:
    """One edge per line: src_id dst_id weight d_spa d_sem."""
    lines = [
        f"{e.src} {e.dst} {e.weight!r} {e.spatial_dist!r} {e.semantic_dist!r}"
        for e in graph.edges
    ]
    return "\n".join(lines) + ("\n" if lines else "")
