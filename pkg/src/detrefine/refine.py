"""Graph-based feature refinement and the uncertainty-scaled loss.

Node features concatenate a channel-reduced copy of the pooled features
with an embedding of the initially predicted class. A fusing 1x1 map brings
them back to the message-passing width, then two graph-convolution layers
run with a LeakyReLU between them. Aggregation at a node is the weighted
mean of its in-neighbors plus a unit self-loop, so source nodes (which have
no in-edges) propagate their own features only, and every aggregate is a
convex combination.

The pooled features feeding the refined classification head are treated as
constants: no gradient from the refinement loss reaches the initial heads
or the features themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError, InternalError
from .graph import ObjectGraph
from .heads import LEAKY_SLOPE
from .numeric import (
    ParamTensor,
    channel_map_1x1,
    cross_entropy,
    dropout,
    leaky_relu,
    linear,
    softmax,
    xavier_init,
    zeros_init,
)
from .records import Detection, foreground_class, foreground_score
from .rng import RngStream


@dataclass
class RefinerParams:
    """Channel maps, class embedding, GCN weights and the refined head."""

    down_w: ParamTensor
    down_b: ParamTensor
    embed: ParamTensor      # (num_labels, embed_dim), background included
    fuse_w: ParamTensor
    fuse_b: ParamTensor
    gcn1_w: ParamTensor
    gcn2_w: ParamTensor
    star1_w: ParamTensor
    star1_b: ParamTensor
    star2_w: ParamTensor
    star2_b: ParamTensor

    @property
    def down_channels(self) -> int:
        return self.down_w.value.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embed.value.shape[1]

    @property
    def node_channels(self) -> int:
        return self.down_channels + self.embed_dim

    @property
    def gcn_out_channels(self) -> int:
        return self.gcn2_w.value.shape[0]

    @property
    def num_labels(self) -> int:
        return self.star2_w.value.shape[0]

    def tensors(self) -> list[ParamTensor]:
        return [self.down_w, self.down_b, self.embed, self.fuse_w, self.fuse_b,
                self.gcn1_w, self.gcn2_w, self.star1_w, self.star1_b,
                self.star2_w, self.star2_b]


def init_refiner_params(feature_channels: int, spatial: tuple[int, int],
                        num_labels: int, rng: RngStream,
                        down_channels: int | None = None,
                        embed_dim: int = 16,
                        gcn1_channels: int | None = None,
                        gcn2_channels: int | None = None,
                        star_hidden: int = 1024) -> RefinerParams:
    """Defaults follow the reference dimensioning: channels halve into the
    down map, the fused width matches it, and the two GCN layers reduce by
    1/2 and 1/4."""
    down = down_channels if down_channels is not None else feature_channels // 2
    fuse = down
    gcn1 = gcn1_channels if gcn1_channels is not None else fuse // 2
    gcn2 = gcn2_channels if gcn2_channels is not None else gcn1 // 4
    h, w = spatial
    star_in = (feature_channels + gcn2) * h * w
    return RefinerParams(
        down_w=xavier_init((down, feature_channels), rng.substream("down_w"), "refiner.down_w"),
        down_b=zeros_init((down,), "refiner.down_b"),
        embed=xavier_init((num_labels, embed_dim), rng.substream("embed"), "refiner.embed"),
        fuse_w=xavier_init((fuse, down + embed_dim), rng.substream("fuse_w"), "refiner.fuse_w"),
        fuse_b=zeros_init((fuse,), "refiner.fuse_b"),
        gcn1_w=xavier_init((gcn1, fuse), rng.substream("gcn1_w"), "refiner.gcn1_w"),
        gcn2_w=xavier_init((gcn2, gcn1), rng.substream("gcn2_w"), "refiner.gcn2_w"),
        star1_w=xavier_init((star_hidden, star_in), rng.substream("star1_w"), "refiner.star1_w"),
        star1_b=zeros_init((star_hidden,), "refiner.star1_b"),
        star2_w=xavier_init((num_labels, star_hidden), rng.substream("star2_w"), "refiner.star2_w"),
        star2_b=zeros_init((num_labels,), "refiner.star2_b"),
    )


def _embed_lookup(class_ids: np.ndarray, embed: ParamTensor, spatial: tuple[int, int]):
    """Broadcast one embedding row per node over the spatial grid."""
    h, w = spatial
    rows = embed.value[class_ids]                       # (n, E)
    out = np.broadcast_to(rows[:, :, None, None], (*rows.shape, h, w)).copy()

    def backward(dy):
        np.add.at(embed.grad, class_ids, dy.sum(axis=(2, 3)))
        return None  # class indices are not differentiable

    return out, backward


def node_features_batch(class_ids: np.ndarray | None, features: np.ndarray,
                        params: RefinerParams):
    """Stacked node features: down-mapped visuals plus class embeddings.

    features is (n, C, H, W); class_ids holds the argmax of each node's
    initial probability vector. Passing class_ids=None zeroes the embedding
    block (the no-class-feature ablation) while keeping the width, so the
    rest of the network is unchanged. Returns (n, down+embed, H, W) and a
    backward that accumulates into the down map and the embedding table.
    """
    down, back_down = channel_map_1x1(features, params.down_w, params.down_b)
    if class_ids is None:
        n, _, h, w = down.shape
        emb = np.zeros((n, params.embed_dim, h, w))
        back_emb = lambda dy: None
    else:
        emb, back_emb = _embed_lookup(class_ids, params.embed, features.shape[-2:])
    out = np.concatenate([down, emb], axis=1)
    n_down = down.shape[1]

    def backward(dy):
        back_down(dy[:, :n_down])
        back_emb(dy[:, n_down:])
        return None  # upstream features are detached by design

    return out, backward


def init_node_features(p_init: np.ndarray, features: np.ndarray,
                       params: RefinerParams) -> np.ndarray:
    """Single-node convenience wrapper around node_features_batch."""
    p_init = np.asarray(p_init, dtype=np.float64)
    if p_init.ndim != 1:
        raise InputError("p_init must be a single probability vector")
    cls = np.array([int(np.argmax(p_init))])
    out, _ = node_features_batch(cls, np.asarray(features)[None], params)
    return out[0]


def _channel_map_nobias(x: np.ndarray, W: ParamTensor):
    y = np.einsum("oc,nchw->nohw", W.value, x)

    def backward(dy):
        W.grad += np.einsum("nohw,nchw->oc", dy, x)
        return np.einsum("oc,nohw->nchw", W.value, dy)

    return y, backward


def _edge_arrays(graph: ObjectGraph):
    index = {pid: i for i, pid in enumerate(graph.node_ids())}
    src = np.array([index[e.src] for e in graph.edges], dtype=np.intp)
    dst = np.array([index[e.dst] for e in graph.edges], dtype=np.intp)
    w = np.array([e.weight for e in graph.edges], dtype=np.float64)
    return src, dst, w


def _aggregate(x: np.ndarray, src: np.ndarray, dst: np.ndarray, w: np.ndarray):
    """Weighted in-neighbor mean with a unit self-loop, per node."""
    den = np.ones(x.shape[0])
    np.add.at(den, dst, w)
    num = x.copy()
    if len(w):
        np.add.at(num, dst, w[:, None, None, None] * x[src])
    y = num / den[:, None, None, None]

    def backward(dy):
        dyn = dy / den[:, None, None, None]
        dx = dyn.copy()
        if len(w):
            np.add.at(dx, src, w[:, None, None, None] * dyn[dst])
        return dx

    return y, backward


def gcn_forward_batch(graph: ObjectGraph, node_feats: np.ndarray,
                      params: RefinerParams):
    """Fuse, then two aggregate-and-map layers with LeakyReLU between them.

    node_feats is (n, node_channels, H, W) in graph.node_ids() order.
    Returns (n, gcn_out, H, W) plus a backward yielding d(node_feats).
    """
    n = len(graph.node_ids())
    if node_feats.shape[0] != n:
        raise InputError(f"expected {n} node features, got {node_feats.shape[0]}")
    if node_feats.shape[1] != params.node_channels:
        raise InputError(
            f"node features have {node_feats.shape[1]} channels, "
            f"expected {params.node_channels}"
        )
    src, dst, w = _edge_arrays(graph)

    fused, back_fuse = channel_map_1x1(node_feats, params.fuse_w, params.fuse_b)
    agg1, back_agg1 = _aggregate(fused, src, dst, w)
    z1, back_map1 = _channel_map_nobias(agg1, params.gcn1_w)
    a1, back_act = leaky_relu(z1, LEAKY_SLOPE)
    agg2, back_agg2 = _aggregate(a1, src, dst, w)
    out, back_map2 = _channel_map_nobias(agg2, params.gcn2_w)

    def backward(dy):
        d = back_agg2(back_map2(dy))
        d = back_agg1(back_map1(back_act(d)))
        return back_fuse(d)

    return out, backward


def gcn_forward(graph: ObjectGraph, node_features: dict[int, np.ndarray],
                params: RefinerParams) -> dict[int, np.ndarray]:
    """Per-node graph features keyed by proposal id (forward only)."""
    ids = graph.node_ids()
    missing = [pid for pid in ids if pid not in node_features]
    if missing:
        raise InputError(f"missing node features for ids {missing}")
    if not ids:
        return {}
    stacked = np.stack([node_features[pid] for pid in ids])
    out, _ = gcn_forward_batch(graph, stacked, params)
    return {pid: out[i] for i, pid in enumerate(ids)}


def refine_classify_batch(features: np.ndarray, graph_features: np.ndarray,
                          params: RefinerParams, rng: RngStream | None = None,
                          dropout_ratio: float = 0.0, training: bool = False):
    """Refined class logits from pooled features plus graph features.

    The pooled features enter as constants: backward returns the gradient
    for graph_features only and accumulates nothing upstream of them.
    """
    if features.shape[0] != graph_features.shape[0]:
        raise InputError("feature and graph-feature batches differ in length")
    if features.shape[-2:] != graph_features.shape[-2:]:
        raise InputError("spatial grids differ between features and graph features")
    combined = np.concatenate([features, graph_features], axis=1)
    n = combined.shape[0]
    flat = combined.reshape(n, -1)
    if flat.shape[1] != params.star1_w.value.shape[1]:
        raise InputError(
            f"refined head expects width {params.star1_w.value.shape[1]}, got {flat.shape[1]}"
        )
    h_pre, back_lin1 = linear(flat, params.star1_w, params.star1_b)
    h_act, back_act = leaky_relu(h_pre, LEAKY_SLOPE)
    h_drop, back_drop = dropout(h_act, dropout_ratio, rng, training)
    logits, back_lin2 = linear(h_drop, params.star2_w, params.star2_b)
    n_gnn = graph_features.shape[1]

    def backward(dlogits):
        dflat = back_lin1(back_act(back_drop(back_lin2(dlogits))))
        dcombined = dflat.reshape(combined.shape)
        return dcombined[:, -n_gnn:]  # pooled-feature slice is detached

    return logits, backward


def refine_classify(features: np.ndarray, graph_features: np.ndarray,
                    params: RefinerParams, rng: RngStream | None = None,
                    dropout_ratio: float = 0.0, training: bool = False):
    """Single-node refined logits; see refine_classify_batch."""
    logits, back = refine_classify_batch(
        np.asarray(features)[None], np.asarray(graph_features)[None], params,
        rng, dropout_ratio, training,
    )

    def backward(dlogits):
        return back(np.asarray(dlogits)[None])[0]

    return logits[0], backward


def uncertainty_weights(uncertainties: np.ndarray, tau: float) -> np.ndarray:
    """Per-object loss weights: softmax(phi / tau) scaled by the object count.

    The weights sum to the survivor count, are positive, and order exactly
    like the uncertainties.
    """
    phis = np.asarray(uncertainties, dtype=np.float64)
    if phis.ndim != 1 or phis.size < 1:
        raise InputError("need a non-empty 1-D uncertainty vector")
    if tau <= 0:
        raise InputError(f"temperature must be positive, got {tau}")
    return softmax(phis, tau=tau) * phis.size


def refinement_loss(logits: np.ndarray, gt_classes, weights: np.ndarray):
    """Weighted cross-entropy over all survivors; returns (loss, backward)."""
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    labels = []
    for i, c in enumerate(gt_classes):
        if c is None:
            raise InputError(f"survivor {i} is missing its ground-truth class")
        labels.append(int(c))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n,):
        raise InputError(f"weights shape {weights.shape} does not match {n} survivors")
    return cross_entropy(logits, np.array(labels), weights=weights)


def total_loss(detection_loss: float, ref_loss: float, refine_weight: float) -> float:
    """Overall training objective: detection loss plus scaled refinement loss."""
    value = detection_loss + refine_weight * ref_loss
    if not np.isfinite(value):
        raise InputError(f"non-finite total loss: {detection_loss} + "
                         f"{refine_weight} * {ref_loss}")
    return value


def merge_results(initial: list[Detection], refined_logits: dict[int, np.ndarray],
                  target_ids) -> list[Detection]:
    """Replace class/score of target detections with the refined prediction.

    Every non-target detection is returned as the same object; target boxes
    are never touched. A target without refined logits is an internal error.
    """
    targets = set(target_ids)
    out = []
    for det in initial:
        if det.proposal_id not in targets:
            out.append(det)
            continue
        if det.proposal_id not in refined_logits:
            raise InternalError(f"no refined logits for target {det.proposal_id}")
        p_star = softmax(np.asarray(refined_logits[det.proposal_id], dtype=np.float64))
        out.append(replace(
            det,
            class_id=foreground_class(p_star),
            score=foreground_score(p_star),
            refined=True,
        ))
    return out
