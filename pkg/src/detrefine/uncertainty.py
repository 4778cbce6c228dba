"""Per-object uncertainty from lightweight MC dropout, plus the relaxed NMS.

Rather than repeating the whole forward pass, only the final fully
connected layer of each head is re-run M times behind a fresh dropout mask;
the hidden activation below the dropout site is deterministic and computed
once. Per-pass class outputs are converted to probabilities before
averaging, so the uncertainty (the mean over classes of the per-class
population standard deviation across passes) is scale-free and bounded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .heads import HeadParams, decode_box, hidden_activation
from .numeric import linear, softmax
from .records import Proposal, foreground_class
from .rbox import nms
from .rng import RngStream


@dataclass(frozen=True)
class McDetection:
    """Mean prediction over MC passes for a single proposal."""

    p_mean: np.ndarray       # class probabilities, including background
    box_mean: np.ndarray     # mean regression offsets (5,)
    uncertainty: float


def uncertainty_scalar(per_class_std: np.ndarray) -> float:
    """Reduce per-class standard deviations to one score: their mean."""
    per_class_std = np.asarray(per_class_std, dtype=np.float64)
    if per_class_std.size < 1:
        raise InputError("need at least one class std")
    if np.any(per_class_std < 0):
        raise InputError("standard deviations cannot be negative")
    return float(per_class_std.mean())


def mc_detect(features: np.ndarray, params: HeadParams, passes: int, ratio: float,
              rng: RngStream) -> McDetection:
    """Run `passes` dropout-perturbed final-layer passes and reduce them.

    Returns the per-class probability mean, the mean box offsets, and the
    uncertainty score. With ratio 0 all passes coincide, so the result is
    the deterministic prediction with uncertainty exactly 0. The standard
    deviation is the population form (divide by M), which is defined at
    M = 1.
    """
    if passes < 1:
        raise InputError(f"MC dropout needs at least one pass, got {passes}")
    if not 0.0 <= ratio < 1.0:
        raise InputError(f"dropout ratio must be in [0, 1), got {ratio}")

    h_cls = hidden_activation(features, params, "cls")
    h_reg = hidden_activation(features, params, "reg")

    if ratio == 0.0:
        logits, _ = linear(h_cls, params.cls2_w, params.cls2_b)
        offsets, _ = linear(h_reg, params.reg2_w, params.reg2_b)
        return McDetection(softmax(logits), offsets, 0.0)

    scale = 1.0 / (1.0 - ratio)
    cls_mask = rng.substream("cls").uniform((passes, h_cls.size)) >= ratio
    reg_mask = rng.substream("reg").uniform((passes, h_reg.size)) >= ratio

    cls_logits, _ = linear(h_cls * cls_mask * scale, params.cls2_w, params.cls2_b)
    reg_offsets, _ = linear(h_reg * reg_mask * scale, params.reg2_w, params.reg2_b)

    probs = softmax(cls_logits)             # (passes, num_labels)
    p_mean = probs.mean(axis=0)
    per_class_std = probs.std(axis=0)       # population form
    return McDetection(p_mean, reg_offsets.mean(axis=0), uncertainty_scalar(per_class_std))


def apply_mc_detection(proposals: list[Proposal], params: HeadParams, passes: int,
                       ratio: float, rng: RngStream) -> list[Proposal]:
    """MC-detect each proposal; fills p, decoded box, score and uncertainty.

    Each proposal consumes a substream addressed by its id, so results do
    not depend on list order or on how the loop is scheduled.
    """
    out = []
    for prop in proposals:
        det = mc_detect(prop.features, params, passes, ratio, rng.substream("prop", prop.id))
        box = decode_box(det.box_mean, prop.box)
        out.append(prop.with_detection(det.p_mean, box, det.uncertainty))
    return out


def relaxed_nms(proposals: list[Proposal], usual_score_thr: float, iou_thr: float,
                per_class: bool = True, mode: str = "score",
                relax_divisor: float = 10.0) -> list[Proposal]:
    """NMS with a relaxed threshold so borderline objects survive.

    mode "score" divides the score threshold by relax_divisor (the default
    reading); mode "iou" divides the IoU threshold instead. Each proposal is
    a candidate detection of its best foreground class scored by that class
    probability, so background-dominated proposals carry low scores and fall
    to the threshold. Survivors keep their features, probabilities, boxes
    and uncertainties, and are returned sorted by descending score (ties by
    ascending id).
    """
    if mode not in ("score", "iou"):
        raise InputError(f"unknown relaxed NMS mode {mode!r}")
    score_thr = usual_score_thr / relax_divisor if mode == "score" else usual_score_thr
    eff_iou = iou_thr / relax_divisor if mode == "iou" else iou_thr

    for prop in proposals:
        if prop.p is None:
            raise InputError(f"proposal {prop.id} has no detection probabilities")

    groups: dict[int, list[Proposal]] = {}
    if per_class:
        for prop in proposals:
            groups.setdefault(foreground_class(prop.p), []).append(prop)
    else:
        groups[0] = list(proposals)

    survivors: list[Proposal] = []
    for _, group in sorted(groups.items()):
        kept = nms([p.box for p in group], [p.score for p in group],
                   iou_thr=eff_iou, score_thr=score_thr)
        survivors.extend(group[i] for i in kept)
    survivors.sort(key=lambda p: (-p.score, p.id))
    return survivors
