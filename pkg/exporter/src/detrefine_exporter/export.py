"""Run a detector over images and write detrefine scene records."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from detrefine import (
    GroundTruth,
    InputError,
    Proposal,
    SceneRecord,
    rotated_iou,
    write_dataset,
)

from .adapters import make_adapter
from .boxes import annotation_to_box
from .manifest import ExportManifest


class ExportError(InputError):
    """Export aborted; carries the per-image report."""

    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


def _fit_features(features: np.ndarray, declared) -> np.ndarray:
    """Pad or crop spatial dims to the declared (C, H, W); channels must match."""
    c, h, w = declared
    if features.ndim != 4:
        raise InputError(f"expected (N, C, h, w) features, got {features.shape}")
    if features.shape[1] != c:
        raise InputError(
            f"feature channels {features.shape[1]} do not match declared {c}"
        )
    _, _, fh, fw = features.shape
    pad_h, pad_w = max(0, h - fh), max(0, w - fw)
    if pad_h or pad_w:
        features = np.pad(
            features,
            ((0, 0), (0, 0),
             (pad_h // 2, pad_h - pad_h // 2),
             (pad_w // 2, pad_w - pad_w // 2)),
        )
    _, _, fh, fw = features.shape
    off_h, off_w = (fh - h) // 2, (fw - w) // 2
    out = features[:, :, off_h:off_h + h, off_w:off_w + w]
    return np.ascontiguousarray(out, dtype=np.float64)


def _class_index(value, class_names: list[str]) -> int:
    if isinstance(value, str):
        try:
            return class_names.index(value)
        except ValueError as exc:
            raise InputError(f"unknown class name {value!r}") from exc
    idx = int(value)
    if not 0 <= idx < len(class_names):
        raise InputError(f"class index {idx} out of range")
    return idx


def _assign_ground_truth(proposals: list[Proposal], gts: list[GroundTruth],
                         background: int, iou_thr: float) -> None:
    for prop in proposals:
        best, best_gt = 0.0, None
        for gt in gts:
            iou = rotated_iou(prop.box, gt.box)
            if iou > best:
                best, best_gt = iou, gt
        if best_gt is not None and best >= iou_thr:
            prop.gt_class = best_gt.class_id
            prop.gt_box = best_gt.box
        else:
            prop.gt_class = background


def export_features(manifest: ExportManifest, annotations: dict, out_path,
                    weights_path=None) -> ExportManifest:
    """Export one SceneRecord per manifest image; abort on shape mismatches.

    `annotations` maps image reference -> {"width", "height", "objects":
    [{"bbox"|"rbox", "class"}]}. Proposals take the ground truth of their
    best-overlapping annotation (IoU >= assign_iou), or the background class.
    Returns the completed manifest (with the per-image report), which is
    also written next to the dataset.
    """
    manifest = manifest.validate()
    adapter = make_adapter(manifest.model, manifest.feature_shape, weights_path)
    background = manifest.num_classes
    scenes = []
    report: dict[str, dict] = {}
    failures = []
    for image_ref in manifest.images:
        info = annotations.get(image_ref)
        if info is None:
            failures.append(image_ref)
            report[image_ref] = {"status": "missing annotations"}
            continue
        try:
            boxes, features = adapter.detect(image_ref, info,
                                             manifest.proposals_per_image)
            features = _fit_features(features, manifest.feature_shape)
            gts = [
                GroundTruth(box=annotation_to_box(obj),
                            class_id=_class_index(obj["class"],
                                                  manifest.class_names))
                for obj in info.get("objects", [])
            ]
            proposals = [
                Proposal(id=i, box=boxes[i], features=features[i])
                for i in range(len(boxes))
            ]
            _assign_ground_truth(proposals, gts, background, manifest.assign_iou)
            scene = SceneRecord(
                scene_id=str(image_ref),
                image_w=float(info.get("width", 1024)),
                image_h=float(info.get("height", 1024)),
                proposals=proposals,
                gt_objects=gts,
            ).validate()
            scenes.append(scene)
            report[image_ref] = {
                "status": "ok",
                "proposals": len(proposals),
                "ground_truths": len(gts),
                "foreground_proposals": sum(
                    1 for p in proposals if p.gt_class != background),
            }
        except InputError as exc:
            failures.append(image_ref)
            report[image_ref] = {"status": f"error: {exc}"}
    if failures:
        raise ExportError(
            f"export aborted; {len(failures)} of {len(manifest.images)} images "
            f"failed: {failures}", report)
    write_dataset(out_path, scenes, num_classes=manifest.num_classes,
                  class_names=list(manifest.class_names),
                  feature_shape=manifest.feature_shape)
    completed = dataclasses.replace(manifest, report=report)
    completed.save(str(Path(out_path)) + ".manifest.json")
    return completed
