"""Core data records passed between pipeline stages.

A Proposal enters with a prior box and pooled features; the detection stage
fills in class probabilities, the decoded box, and the uncertainty score.
Class indices run over the foreground classes first, with the background
class always stored at the last index (num_labels - 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError
from .rbox import RotatedBox


def foreground_class(p: np.ndarray) -> int:
    """Best object class: argmax over the foreground slice, lowest index wins."""
    return int(np.argmax(p[:-1]))


def foreground_score(p: np.ndarray) -> float:
    """Detection confidence: the best foreground probability.

    The background entry is excluded on purpose: a proposal dominated by
    background must come out with a low score so that score thresholds can
    actually filter it.
    """
    return float(np.max(p[:-1]))


@dataclass(frozen=True)
class GroundTruth:
    box: RotatedBox
    class_id: int


@dataclass
class Proposal:
    """One candidate object: prior box, pooled features, optional labels.

    p, score and uncertainty are populated by the MC-dropout detection pass;
    until then they are None. Instances are treated as immutable; stages
    produce updated copies via dataclasses.replace.
    """

    id: int
    box: RotatedBox
    features: np.ndarray
    gt_class: int | None = None
    gt_box: RotatedBox | None = None
    p: np.ndarray | None = None
    score: float | None = None
    uncertainty: float | None = None

    def with_detection(self, p: np.ndarray, box: RotatedBox, uncertainty: float) -> "Proposal":
        p = np.asarray(p, dtype=np.float64)
        return replace(
            self, p=p, box=box, score=foreground_score(p), uncertainty=float(uncertainty)
        )


@dataclass
class SceneRecord:
    """Interchange unit: image metadata, proposals, ground-truth objects."""

    scene_id: str
    image_w: float
    image_h: float
    proposals: list[Proposal] = field(default_factory=list)
    gt_objects: list[GroundTruth] = field(default_factory=list)

    def validate(self) -> "SceneRecord":
        if self.image_w <= 0 or self.image_h <= 0:
            raise InputError(f"scene {self.scene_id}: non-positive image size")
        shape = None
        for prop in self.proposals:
            if shape is None:
                shape = prop.features.shape
            elif prop.features.shape != shape:
                raise InputError(
                    f"scene {self.scene_id}: feature shape {prop.features.shape} "
                    f"differs from {shape}"
                )
            if not np.all(np.isfinite(prop.features)):
                raise InputError(f"scene {self.scene_id}: non-finite features")
            if not (0 <= prop.box.cx <= self.image_w and 0 <= prop.box.cy <= self.image_h):
                raise InputError(
                    f"scene {self.scene_id}: proposal {prop.id} center outside image"
                )
        return self

    @property
    def feature_shape(self) -> tuple[int, ...] | None:
        return self.proposals[0].features.shape if self.proposals else None


@dataclass(frozen=True)
class Detection:
    """A scored, classified box as reported by the engine."""

    scene_id: str
    proposal_id: int
    class_id: int
    score: float
    box: RotatedBox
    uncertainty: float
    refined: bool = False
