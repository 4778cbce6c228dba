"""Export manifest: what to run, over which images, with which shapes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from detrefine import InputError


@dataclass
class ExportManifest:
    model: str                       # e.g. "stub:7" or "torchvision:fasterrcnn_resnet50_fpn"
    feature_layer: str               # name of the pooled-feature layer being captured
    proposals_per_image: int
    class_names: list[str]
    images: list[str]
    feature_shape: tuple[int, int, int] = (256, 7, 7)
    assign_iou: float = 0.5          # proposal-to-ground-truth matching threshold
    report: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def validate(self) -> "ExportManifest":
        if self.proposals_per_image < 1:
            raise InputError("proposals_per_image must be positive")
        if not self.class_names:
            raise InputError("manifest needs at least one class name")
        if len(self.feature_shape) != 3 or any(v < 1 for v in self.feature_shape):
            raise InputError(f"bad feature_shape {self.feature_shape!r}")
        if not 0.0 < self.assign_iou <= 1.0:
            raise InputError("assign_iou must be in (0, 1]")
        return self

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "feature_layer": self.feature_layer,
            "proposals_per_image": self.proposals_per_image,
            "class_names": list(self.class_names),
            "images": list(self.images),
            "feature_shape": list(self.feature_shape),
            "assign_iou": self.assign_iou,
            "report": self.report,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExportManifest":
        try:
            manifest = cls(
                model=str(obj["model"]),
                feature_layer=str(obj.get("feature_layer", "roi_pool")),
                proposals_per_image=int(obj["proposals_per_image"]),
                class_names=[str(c) for c in obj["class_names"]],
                images=[str(i) for i in obj.get("images", [])],
                feature_shape=tuple(int(v) for v in obj.get("feature_shape",
                                                            (256, 7, 7))),
                assign_iou=float(obj.get("assign_iou", 0.5)),
                report=dict(obj.get("report", {})),
            )
        except KeyError as exc:
            raise InputError(f"manifest is missing {exc}") from exc
        return manifest.validate()

    @classmethod
    def load(cls, path) -> "ExportManifest":
        p = Path(path)
        if not p.exists():
            raise InputError(f"manifest not found: {p}")
        return cls.from_json(json.loads(p.read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))
