"""Detector adapters producing per-proposal pooled features and boxes.

An adapter takes an image reference and returns (boxes, features) where
boxes is a list of RotatedBox priors and features is (N, C, h, w). The stub
adapter fabricates deterministic proposals around the annotated objects and
is what the tests and offline runs use; the torchvision adapter wraps a real
two-stage detector when torch and weights are available.
"""

from __future__ import annotations

import hashlib

import numpy as np

from detrefine import InputError, RngStream, RotatedBox

from .boxes import annotation_to_box


class StubDetector:
    """Deterministic pseudo-detector for pipeline validation.

    Emits one jittered proposal per annotated object (cycling when the
    budget allows more) plus random clutter, with features drawn from a
    stream keyed by (seed, image id, proposal index). No learning, no
    image decoding; the image reference is only an addressing key.
    """

    def __init__(self, seed: int, feature_shape):
        self.seed = seed
        self.feature_shape = tuple(feature_shape)

    def detect(self, image_ref: str, image_info: dict, budget: int):
        digest = hashlib.sha256(image_ref.encode("utf-8")).hexdigest()[:12]
        rng = RngStream(self.seed, ("stub", digest))
        width = float(image_info.get("width", 1024))
        height = float(image_info.get("height", 1024))
        objects = image_info.get("objects", [])
        boxes: list[RotatedBox] = []
        feats = []
        for k in range(budget):
            srng = rng.substream(k)
            if objects and k < 2 * len(objects):
                base = annotation_to_box(objects[k % len(objects)])
                cx = min(max(base.cx + float(srng.normal()) * 2.0, 1.0), width - 1)
                cy = min(max(base.cy + float(srng.normal()) * 2.0, 1.0), height - 1)
                box = RotatedBox(cx, cy, base.w * (1 + 0.05 * float(srng.normal())),
                                 base.h * (1 + 0.05 * float(srng.normal())),
                                 base.theta + 0.03 * float(srng.normal()))
            else:
                box = RotatedBox(1 + float(srng.uniform()) * (width - 2),
                                 1 + float(srng.uniform()) * (height - 2),
                                 8 + float(srng.uniform()) * 40,
                                 8 + float(srng.uniform()) * 40,
                                 float((srng.uniform() - 0.5) * np.pi))
            boxes.append(box)
            feats.append(srng.substream("feat").normal(self.feature_shape))
        features = (np.stack(feats) if feats
                    else np.zeros((0, *self.feature_shape)))
        return boxes, features


class TorchvisionDetector:
    """Wraps a torchvision two-stage detector, capturing pooled RoI features.

    Requires torch/torchvision and model weights; images are read from disk.
    Feature capture hooks the box RoI pooling layer, so the exported tensors
    are exactly what the detector's own box head consumed.
    """

    def __init__(self, model_name: str, feature_shape, weights_path=None):
        try:
            import torch
            import torchvision
        except ImportError as exc:
            raise InputError(
                "torchvision adapter needs torch and torchvision installed"
            ) from exc
        self._torch = torch
        builder = getattr(torchvision.models.detection, model_name, None)
        if builder is None:
            raise InputError(f"unknown torchvision detection model {model_name!r}")
        self.model = builder(weights=None, weights_backbone=None)
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu")
            self.model.load_state_dict(state)
        self.model.eval()
        self.feature_shape = tuple(feature_shape)
        self._captured = {}
        self.model.roi_heads.box_roi_pool.register_forward_hook(
            lambda module, args, out: self._captured.update(pool=out.detach())
        )
        self.model.rpn.register_forward_hook(
            lambda module, args, out: self._captured.update(proposals=out[0])
        )

    def detect(self, image_ref: str, image_info: dict, budget: int):
        import torchvision.io

        torch = self._torch
        image = torchvision.io.read_image(image_ref).float() / 255.0
        with torch.no_grad():
            self.model([image])
        pooled = self._captured["pool"][:budget].cpu().numpy().astype(np.float64)
        props = self._captured["proposals"][0][:budget].cpu().numpy()
        boxes = [RotatedBox(0.5 * (p[0] + p[2]), 0.5 * (p[1] + p[3]),
                            max(p[2] - p[0], 1e-3), max(p[3] - p[1], 1e-3), 0.0)
                 for p in props]
        return boxes, pooled


def make_adapter(model_ref: str, feature_shape, weights_path=None):
    """Adapter factory keyed by the manifest's model identifier."""
    kind, _, arg = model_ref.partition(":")
    if kind == "stub":
        return StubDetector(int(arg or 0), feature_shape)
    if kind == "torchvision":
        if not arg:
            raise InputError("torchvision model reference needs a model name")
        return TorchvisionDetector(arg, feature_shape, weights_path)
    raise InputError(f"unknown model reference {model_ref!r}")
