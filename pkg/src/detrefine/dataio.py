"""Scene-record interchange files.

Binary container (all integers and floats little-endian):

    magic   b"SCNE", u16 version (1)
    u32     header length, UTF-8 JSON header:
            {"num_classes", "class_names", "feature_shape", "num_scenes"}
    record* u32 scene-id length + UTF-8 scene id
            f64 image_w, f64 image_h
            u32 proposal count, u32 ground-truth count
            proposal*: i64 id, f64[5] prior box, i64 gt_class (-1 = none),
                       u8 has_gt_box (+ f64[5] gt_box), f64[C*H*W] features
            gt*:       f64[5] box, i64 class

A sidecar "<path>.idx" (magic b"SIDX", u16 version, u64 count, u64 offsets)
holds the byte offset of every record for streamed random access. Files
ending in .json hold the equivalent human-readable form for tiny fixtures;
Python's JSON float round-trip keeps those bit-exact too.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .rbox import RotatedBox
from .records import GroundTruth, Proposal, SceneRecord

MAGIC = b"SCNE"
IDX_MAGIC = b"SIDX"
VERSION = 1


@dataclass
class DatasetHeader:
    num_classes: int                 # foreground classes; background is implicit
    class_names: list[str]
    feature_shape: tuple[int, int, int]
    num_scenes: int

    @property
    def num_labels(self) -> int:
        return self.num_classes + 1

    def to_json(self) -> dict:
        return {
            "version": VERSION,
            "num_classes": self.num_classes,
            "class_names": list(self.class_names),
            "feature_shape": list(self.feature_shape),
            "num_scenes": self.num_scenes,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetHeader":
        try:
            header = cls(
                num_classes=int(obj["num_classes"]),
                class_names=[str(s) for s in obj["class_names"]],
                feature_shape=tuple(int(v) for v in obj["feature_shape"]),
                num_scenes=int(obj["num_scenes"]),
            )
        except KeyError as exc:
            raise InputError(f"dataset header is missing {exc}") from exc
        if len(header.feature_shape) != 3:
            raise InputError("feature_shape must be (C, H, W)")
        if len(header.class_names) != header.num_classes:
            raise InputError("class_names length must equal num_classes")
        return header


def _box_tuple(box: RotatedBox):
    return (box.cx, box.cy, box.w, box.h, box.theta)


def _encode_scene(scene: SceneRecord, feature_shape) -> bytes:
    parts = []
    sid = scene.scene_id.encode("utf-8")
    parts.append(struct.pack("<I", len(sid)))
    parts.append(sid)
    parts.append(struct.pack("<dd", scene.image_w, scene.image_h))
    parts.append(struct.pack("<II", len(scene.proposals), len(scene.gt_objects)))
    for prop in scene.proposals:
        if prop.features.shape != feature_shape:
            raise InputError(
                f"scene {scene.scene_id}: feature shape {prop.features.shape} "
                f"does not match declared {feature_shape}"
            )
        parts.append(struct.pack("<q", prop.id))
        parts.append(struct.pack("<5d", *_box_tuple(prop.box)))
        parts.append(struct.pack("<q", -1 if prop.gt_class is None else prop.gt_class))
        if prop.gt_box is None:
            parts.append(struct.pack("<B", 0))
        else:
            parts.append(struct.pack("<B", 1))
            parts.append(struct.pack("<5d", *_box_tuple(prop.gt_box)))
        parts.append(np.ascontiguousarray(prop.features, dtype="<f8").tobytes())
    for gt in scene.gt_objects:
        parts.append(struct.pack("<5d", *_box_tuple(gt.box)))
        parts.append(struct.pack("<q", gt.class_id))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise InputError("dataset file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode_scene(r: _Reader, feature_shape) -> SceneRecord:
    (sid_len,) = r.unpack("<I")
    scene_id = r.take(sid_len).decode("utf-8")
    image_w, image_h = r.unpack("<dd")
    n_props, n_gt = r.unpack("<II")
    n_feat = int(np.prod(feature_shape))
    proposals = []
    for _ in range(n_props):
        (pid,) = r.unpack("<q")
        box = RotatedBox(*r.unpack("<5d"))
        (gt_class,) = r.unpack("<q")
        (has_gt_box,) = r.unpack("<B")
        gt_box = RotatedBox(*r.unpack("<5d")) if has_gt_box else None
        feats = np.frombuffer(r.take(8 * n_feat), dtype="<f8").reshape(feature_shape)
        proposals.append(Proposal(
            id=int(pid), box=box, features=feats.astype(np.float64),
            gt_class=None if gt_class < 0 else int(gt_class), gt_box=gt_box,
        ))
    gts = []
    for _ in range(n_gt):
        box = RotatedBox(*r.unpack("<5d"))
        (cls,) = r.unpack("<q")
        gts.append(GroundTruth(box=box, class_id=int(cls)))
    return SceneRecord(scene_id=scene_id, image_w=image_w, image_h=image_h,
                       proposals=proposals, gt_objects=gts).validate()


def _scene_to_json(scene: SceneRecord) -> dict:
    return {
        "scene_id": scene.scene_id,
        "image_w": scene.image_w,
        "image_h": scene.image_h,
        "proposals": [
            {
                "id": p.id,
                "box": list(_box_tuple(p.box)),
                "gt_class": p.gt_class,
                "gt_box": None if p.gt_box is None else list(_box_tuple(p.gt_box)),
                "features": p.features.reshape(-1).tolist(),
            }
            for p in scene.proposals
        ],
        "gt_objects": [
            {"box": list(_box_tuple(g.box)), "class": g.class_id}
            for g in scene.gt_objects
        ],
    }


def _scene_from_json(obj: dict, feature_shape) -> SceneRecord:
    proposals = []
    for p in obj["proposals"]:
        feats = np.array(p["features"], dtype=np.float64)
        if feats.size != int(np.prod(feature_shape)):
            raise InputError(f"scene {obj['scene_id']}: wrong feature length")
        proposals.append(Proposal(
            id=int(p["id"]), box=RotatedBox(*p["box"]),
            features=feats.reshape(feature_shape),
            gt_class=None if p["gt_class"] is None else int(p["gt_class"]),
            gt_box=None if p["gt_box"] is None else RotatedBox(*p["gt_box"]),
        ))
    gts = [GroundTruth(box=RotatedBox(*g["box"]), class_id=int(g["class"]))
           for g in obj["gt_objects"]]
    return SceneRecord(scene_id=str(obj["scene_id"]), image_w=float(obj["image_w"]),
                       image_h=float(obj["image_h"]), proposals=proposals,
                       gt_objects=gts).validate()


def write_dataset(path, scenes: list[SceneRecord], num_classes: int,
                  class_names: list[str] | None = None,
                  feature_shape: tuple[int, int, int] | None = None) -> DatasetHeader:
    """Write scenes plus header; emits the sidecar index for binary files."""
    path = Path(path)
    if class_names is None:
        class_names = [f"class_{i}" for i in range(num_classes)]
    if feature_shape is None:
        for scene in scenes:
            if scene.proposals:
                feature_shape = scene.proposals[0].features.shape
                break
    if feature_shape is None:
        raise InputError("feature_shape is required for datasets with no proposals")
    header = DatasetHeader(num_classes=num_classes, class_names=class_names,
                           feature_shape=tuple(feature_shape), num_scenes=len(scenes))

    if path.suffix == ".json":
        payload = {
            "format": "scene-records",
            "header": header.to_json(),
            "scenes": [_scene_to_json(s) for s in scenes],
        }
        path.write_text(json.dumps(payload, indent=1))
        return header

    header_bytes = json.dumps(header.to_json(), sort_keys=True).encode("utf-8")
    offsets = []
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for scene in scenes:
            offsets.append(fh.tell())
            fh.write(_encode_scene(scene, header.feature_shape))
    with open(str(path) + ".idx", "wb") as fh:
        fh.write(IDX_MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<Q", len(offsets)))
        fh.write(struct.pack(f"<{len(offsets)}Q", *offsets))
    return header


def _load_binary(path: Path):
    data = path.read_bytes()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise InputError(f"{path} is not a scene-record file")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise InputError(f"unsupported dataset version {version}")
    (hlen,) = r.unpack("<I")
    header = DatasetHeader.from_json(json.loads(r.take(hlen).decode("utf-8")))
    scenes = [_decode_scene(r, header.feature_shape) for _ in range(header.num_scenes)]
    if r.pos != len(data):
        raise InputError(f"{path} has {len(data) - r.pos} trailing bytes")
    return header, scenes


def load_dataset(path) -> tuple[DatasetHeader, list[SceneRecord]]:
    """Load a dataset in either the binary or the JSON text form."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"dataset file not found: {path}")
    if path.suffix == ".json":
        payload = json.loads(path.read_text())
        if payload.get("format") != "scene-records":
            raise InputError(f"{path} is not a scene-record JSON file")
        header = DatasetHeader.from_json(payload["header"])
        scenes = [_scene_from_json(o, header.feature_shape) for o in payload["scenes"]]
        if len(scenes) != header.num_scenes:
            raise InputError("scene count does not match header")
        return header, scenes
    return _load_binary(path)


def read_index(path) -> list[int]:
    """Record offsets from the sidecar index of a binary dataset."""
    idx_path = Path(str(path) + ".idx")
    if not idx_path.exists():
        raise InputError(f"missing sidecar index: {idx_path}")
    data = idx_path.read_bytes()
    r = _Reader(data)
    if r.take(4) != IDX_MAGIC:
        raise InputError(f"{idx_path} is not a sidecar index")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise InputError(f"unsupported index version {version}")
    (count,) = r.unpack("<Q")
    return list(r.unpack(f"<{count}Q"))


def load_scene(path, index: int) -> SceneRecord:
    """Random access to one record of a binary dataset via the sidecar."""
    path = Path(path)
    offsets = read_index(path)
    if not 0 <= index < len(offsets):
        raise InputError(f"scene index {index} out of range [0, {len(offsets)})")
    data = path.read_bytes()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise InputError(f"{path} is not a scene-record file")
    r.unpack("<H")
    (hlen,) = r.unpack("<I")
    header = DatasetHeader.from_json(json.loads(r.take(hlen).decode("utf-8")))
    r.pos = offsets[index]
    return _decode_scene(r, header.feature_shape)
