import json
import math

import numpy as np
import pytest

from detrefine.dataio import (
    DatasetHeader,
    load_dataset,
    load_scene,
    read_index,
    write_dataset,
)
from detrefine.errors import InputError
from detrefine.rbox import RotatedBox
from detrefine.records import GroundTruth, Proposal, SceneRecord
from detrefine.rng import RngStream

SHAPE = (3, 2, 2)


def make_scene(scene_id, seed, n_props=3, n_gt=2):
    rng = RngStream(seed, ("scene", scene_id))
    proposals = []
    for i in range(n_props):
        gt_class = int(rng.integers(0, 3)) if i % 2 == 0 else None
        gt_box = (RotatedBox(40 + i, 50, 6, 4, 0.2)
                  if gt_class is not None and gt_class != 2 else None)
        if gt_class is not None and gt_class != 2 and gt_box is None:
            gt_box = RotatedBox(40 + i, 50, 6, 4, 0.2)
        proposals.append(Proposal(
            id=i, box=RotatedBox(40 + i, 50 + i, 8, 5, float(rng.normal()) * 0.5),
            features=rng.normal(SHAPE),
            gt_class=gt_class,
            gt_box=gt_box,
        ))
    gts = [GroundTruth(box=RotatedBox(40 + i, 50, 6, 4, 0.2), class_id=i % 2)
           for i in range(n_gt)]
    return SceneRecord(scene_id=scene_id, image_w=100.0, image_h=100.0,
                       proposals=proposals, gt_objects=gts)


def assert_scenes_equal_bitwise(a, b):
    assert a.scene_id == b.scene_id
    assert a.image_w == b.image_w and a.image_h == b.image_h
    assert len(a.proposals) == len(b.proposals)
    for pa, pb in zip(a.proposals, b.proposals):
        assert pa.id == pb.id
        assert pa.box == pb.box
        assert pa.gt_class == pb.gt_class
        assert pa.gt_box == pb.gt_box
        np.testing.assert_array_equal(pa.features, pb.features)
    assert a.gt_objects == b.gt_objects


class TestBinaryRoundTrip:
    def test_bit_exact_round_trip(self, tmp_path):
        scenes = [make_scene(f"sc{i}", seed=i) for i in range(4)]
        path = tmp_path / "data.scenes"
        header = write_dataset(path, scenes, num_classes=2, class_names=["a", "b"])
        got_header, got_scenes = load_dataset(path)
        assert got_header.num_classes == 2
        assert got_header.class_names == ["a", "b"]
        assert got_header.feature_shape == SHAPE
        assert got_header.num_scenes == 4
        assert header.num_labels == 3
        for a, b in zip(scenes, got_scenes):
            assert_scenes_equal_bitwise(a, b)

    def test_sidecar_random_access(self, tmp_path):
        scenes = [make_scene(f"sc{i}", seed=10 + i) for i in range(5)]
        path = tmp_path / "data.scenes"
        write_dataset(path, scenes, num_classes=2)
        offsets = read_index(path)
        assert len(offsets) == 5
        assert offsets == sorted(offsets)
        scene3 = load_scene(path, 3)
        assert_scenes_equal_bitwise(scene3, scenes[3])
        with pytest.raises(InputError):
            load_scene(path, 5)

    def test_empty_dataset_has_valid_header(self, tmp_path):
        path = tmp_path / "empty.scenes"
        write_dataset(path, [], num_classes=3, feature_shape=SHAPE)
        header, scenes = load_dataset(path)
        assert scenes == []
        assert header.num_scenes == 0
        assert header.feature_shape == SHAPE
        assert read_index(path) == []

    def test_rejects_trailing_garbage(self, tmp_path):
        path = tmp_path / "data.scenes"
        write_dataset(path, [make_scene("s", 1)], num_classes=2)
        with open(path, "ab") as fh:
            fh.write(b"extra")
        with pytest.raises(InputError):
            load_dataset(path)

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "data.scenes"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(InputError):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_dataset(tmp_path / "nope.scenes")

    def test_shape_mismatch_on_write(self, tmp_path):
        scene = make_scene("s", 2)
        scene.proposals[0].features = np.zeros((4, 2, 2))
        with pytest.raises(InputError):
            write_dataset(tmp_path / "bad.scenes", [scene], num_classes=2,
                          feature_shape=SHAPE)


class TestTextVariant:
    def test_json_round_trip_bit_exact(self, tmp_path):
        scenes = [make_scene(f"sc{i}", seed=20 + i, n_props=2) for i in range(2)]
        path = tmp_path / "tiny.json"
        write_dataset(path, scenes, num_classes=2)
        header, got = load_dataset(path)
        assert header.num_scenes == 2
        for a, b in zip(scenes, got):
            assert_scenes_equal_bitwise(a, b)

    def test_json_is_human_readable(self, tmp_path):
        path = tmp_path / "tiny.json"
        write_dataset(path, [make_scene("s", 30, n_props=1)], num_classes=2)
        payload = json.loads(path.read_text())
        assert payload["format"] == "scene-records"
        assert payload["scenes"][0]["scene_id"] == "s"
        assert "features" in payload["scenes"][0]["proposals"][0]

    def test_rejects_non_scene_json(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"hello": 1}))
        with pytest.raises(InputError):
            load_dataset(path)


class TestValidation:
    def test_center_outside_image_rejected(self, tmp_path):
        scene = make_scene("s", 3)
        scene.proposals[0].box = RotatedBox(500.0, 50.0, 8, 5, 0.0)
        path = tmp_path / "bad.scenes"
        write_dataset(path, [scene], num_classes=2)  # write is permissive
        with pytest.raises(InputError):
            load_dataset(path)

    def test_theta_normalized_on_load(self, tmp_path):
        scene = make_scene("s", 4)
        # boxes always carry normalized angles; confirm round trip keeps them
        assert all(-math.pi / 2 <= p.box.theta < math.pi / 2 for p in scene.proposals)
        path = tmp_path / "data.scenes"
        write_dataset(path, [scene], num_classes=2)
        _, got = load_dataset(path)
        for p in got[0].proposals:
            assert -math.pi / 2 <= p.box.theta < math.pi / 2

    def test_header_schema_errors(self):
        with pytest.raises(InputError):
            DatasetHeader.from_json({"num_classes": 2})
        with pytest.raises(InputError):
            DatasetHeader.from_json({
                "num_classes": 2, "class_names": ["a"],
                "feature_shape": [1, 2, 3], "num_scenes": 0,
            })
