"""Initial detection heads over pooled proposal features.

Both heads share the same two-layer architecture: flatten, linear to a
hidden width, LeakyReLU, dropout, linear to the output arity (class logits
for the classification head, five box offsets for the regression head).
Box offsets are relative to the proposal's prior box: (dx/w, dy/h,
log-width ratio, log-height ratio, angle delta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .numeric import (
    ParamTensor,
    cross_entropy,
    dropout,
    leaky_relu,
    linear,
    smooth_l1,
    xavier_init,
    zeros_init,
)
from .rbox import RotatedBox
from .records import Proposal
from .rng import RngStream

LEAKY_SLOPE = 0.01


@dataclass
class HeadParams:
    """Two fully connected layers each for classification and regression."""

    cls1_w: ParamTensor
    cls1_b: ParamTensor
    cls2_w: ParamTensor
    cls2_b: ParamTensor
    reg1_w: ParamTensor
    reg1_b: ParamTensor
    reg2_w: ParamTensor
    reg2_b: ParamTensor

    @property
    def in_dim(self) -> int:
        return self.cls1_w.value.shape[1]

    @property
    def hidden(self) -> int:
        return self.cls1_w.value.shape[0]

    @property
    def num_labels(self) -> int:
        """Class count including the trailing background class."""
        return self.cls2_w.value.shape[0]

    def tensors(self) -> list[ParamTensor]:
        return [self.cls1_w, self.cls1_b, self.cls2_w, self.cls2_b,
                self.reg1_w, self.reg1_b, self.reg2_w, self.reg2_b]


def init_head_params(in_dim: int, hidden: int, num_labels: int, rng: RngStream) -> HeadParams:
    # final layers start near zero (classifier mildly, regressor strongly) so
    # early logits are calm and decoded boxes stay at their priors until the
    # regressor has actually learned something
    return HeadParams(
        cls1_w=xavier_init((hidden, in_dim), rng.substream("cls1_w"), "heads.cls1_w"),
        cls1_b=zeros_init((hidden,), "heads.cls1_b"),
        cls2_w=ParamTensor(rng.substream("cls2_w").normal((num_labels, hidden),
                                                          scale=0.01),
                           name="heads.cls2_w"),
        cls2_b=zeros_init((num_labels,), "heads.cls2_b"),
        reg1_w=xavier_init((hidden, in_dim), rng.substream("reg1_w"), "heads.reg1_w"),
        reg1_b=zeros_init((hidden,), "heads.reg1_b"),
        reg2_w=ParamTensor(rng.substream("reg2_w").normal((5, hidden), scale=0.001),
                           name="heads.reg2_w"),
        reg2_b=zeros_init((5,), "heads.reg2_b"),
    )


def _flatten(features: np.ndarray, in_dim: int) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    flat = features.reshape(*features.shape[:-3], -1) if features.ndim >= 3 else features
    if flat.shape[-1] != in_dim:
        raise InputError(
            f"head expects flattened width {in_dim}, got {flat.shape[-1]}"
        )
    return flat


def _two_layer_forward(x, w1, b1, w2, b2, rng, dropout_ratio, training):
    h_pre, back_lin1 = linear(x, w1, b1)
    h_act, back_act = leaky_relu(h_pre, LEAKY_SLOPE)
    h_drop, back_drop = dropout(h_act, dropout_ratio, rng, training)
    out, back_lin2 = linear(h_drop, w2, b2)

    def backward(dout):
        return back_lin1(back_act(back_drop(back_lin2(dout))))

    return out, backward


def cls_forward(features, params: HeadParams, rng: RngStream | None = None,
                dropout_ratio: float = 0.0, training: bool = False):
    """Class logits for one proposal (or a leading batch of them)."""
    x = _flatten(features, params.in_dim)
    return _two_layer_forward(x, params.cls1_w, params.cls1_b, params.cls2_w,
                              params.cls2_b, rng, dropout_ratio, training)


def reg_forward(features, params: HeadParams, rng: RngStream | None = None,
                dropout_ratio: float = 0.0, training: bool = False):
    """Five box offsets relative to the proposal's prior box."""
    x = _flatten(features, params.in_dim)
    return _two_layer_forward(x, params.reg1_w, params.reg1_b, params.reg2_w,
                              params.reg2_b, rng, dropout_ratio, training)


def hidden_activation(features, params: HeadParams, head: str) -> np.ndarray:
    """Pre-dropout hidden layer of one head; deterministic, forward only.

    The MC-dropout pass reuses this: repeating a head with fresh dropout
    masks only changes what happens after this activation.
    """
    x = _flatten(features, params.in_dim)
    w1, b1 = (params.cls1_w, params.cls1_b) if head == "cls" else (params.reg1_w, params.reg1_b)
    h, _ = linear(x, w1, b1)
    h, _ = leaky_relu(h, LEAKY_SLOPE)
    return h


def encode_box(gt: RotatedBox, prior: RotatedBox) -> np.ndarray:
    """Regression target for predicting gt from the prior box."""
    return np.array([
        (gt.cx - prior.cx) / prior.w,
        (gt.cy - prior.cy) / prior.h,
        math.log(gt.w / prior.w),
        math.log(gt.h / prior.h),
        gt.theta - prior.theta,
    ])


def decode_box(offsets: np.ndarray, prior: RotatedBox) -> RotatedBox:
    """Apply predicted offsets to the prior box."""
    o = np.asarray(offsets, dtype=np.float64)
    if o.shape != (5,):
        raise InputError(f"box offsets must have shape (5,), got {o.shape}")
    return RotatedBox(
        prior.cx + o[0] * prior.w,
        prior.cy + o[1] * prior.h,
        prior.w * math.exp(o[2]),
        prior.h * math.exp(o[3]),
        prior.theta + o[4],
    )


@dataclass
class InitialLosses:
    cls: float
    reg: float
    total: float


def initial_loss(proposals: list[Proposal], params: HeadParams, reg_weight: float,
                 rng: RngStream | None = None, dropout_ratio: float = 0.0,
                 training: bool = False):
    """Summed detection loss: cross-entropy plus weighted box regression.

    Every proposal must carry gt_class; proposals of a foreground class must
    also carry gt_box and contribute a smooth-L1 term on the encoded
    offsets. Returns (InitialLosses, backward) where backward accumulates
    gradients into the head parameters.
    """
    if not proposals:
        raise InputError("initial_loss needs at least one proposal")
    background = params.num_labels - 1
    labels = []
    for prop in proposals:
        if prop.gt_class is None:
            raise InputError(f"proposal {prop.id} is missing gt_class")
        if prop.gt_class != background and prop.gt_box is None:
            raise InputError(f"foreground proposal {prop.id} is missing gt_box")
        labels.append(prop.gt_class)
    labels = np.array(labels, dtype=np.int64)

    feats = np.stack([p.features for p in proposals])
    cls_rng = rng.substream("cls") if rng is not None else None
    reg_rng = rng.substream("reg") if rng is not None else None

    logits, back_cls = cls_forward(feats, params, cls_rng, dropout_ratio, training)
    l_cls, back_ce = cross_entropy(logits, labels)

    pos = [i for i, p in enumerate(proposals) if p.gt_class != background]
    l_reg = 0.0
    back_reg = back_sl1 = None
    if pos:
        pos_feats = feats[pos]
        offsets, back_reg = reg_forward(pos_feats, params, reg_rng, dropout_ratio, training)
        targets = np.stack([
            encode_box(proposals[i].gt_box, proposals[i].box) for i in pos
        ])
        l_reg, back_sl1 = smooth_l1(offsets, targets)

    total = l_cls + reg_weight * l_reg

    def backward(dloss: float = 1.0):
        back_cls(back_ce(dloss))
        if back_reg is not None:
            back_reg(back_sl1(dloss * reg_weight))

    return InitialLosses(cls=l_cls, reg=l_reg, total=total), backward
