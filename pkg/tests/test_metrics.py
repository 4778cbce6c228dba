import math

import numpy as np
import pytest
from oracles import brute_force_ap

from detrefine.errors import InputError
from detrefine.metrics import EvalReport, ap_compute, mean_ap
from detrefine.rbox import RotatedBox
from detrefine.records import Detection, GroundTruth
from detrefine.rng import RngStream


def det(pid, class_id, score, cx, cy=10.0, scene="s0", w=6.0, h=6.0, theta=0.0):
    return Detection(scene_id=scene, proposal_id=pid, class_id=class_id, score=score,
                     box=RotatedBox(cx, cy, w, h, theta), uncertainty=0.0)


def gt(class_id, cx, cy=10.0, w=6.0, h=6.0, theta=0.0):
    return GroundTruth(box=RotatedBox(cx, cy, w, h, theta), class_id=class_id)


class TestApCompute:
    def test_perfect_detections_give_ap_one(self):
        gts = {"s0": [gt(0, 10), gt(0, 40)]}
        dets = [det(0, 0, 0.9, 10), det(1, 0, 0.8, 40)]
        assert ap_compute(dets, gts)[0] == pytest.approx(1.0)

    def test_no_matches_gives_zero(self):
        gts = {"s0": [gt(0, 10)]}
        dets = [det(0, 0, 0.9, 500)]
        assert ap_compute(dets, gts)[0] == 0.0

    def test_no_detections_gives_zero(self):
        gts = {"s0": [gt(0, 10)]}
        assert ap_compute([], gts)[0] == 0.0

    def test_two_tp_one_fp_interleaved_hand_case(self):
        # ranks: TP (p=1, r=1/2), FP (p=1/2), TP (p=2/3, r=1)
        # 11-point AP = (6 * 1 + 5 * 2/3) / 11 = 28/33
        gts = {"s0": [gt(0, 10), gt(0, 40)]}
        dets = [det(0, 0, 0.9, 10), det(1, 0, 0.8, 200), det(2, 0, 0.7, 40)]
        ap = ap_compute(dets, gts)[0]
        assert ap == pytest.approx(28.0 / 33.0, abs=1e-12)
        assert ap == brute_force_ap(dets, gts, 0.5)[0]

    def test_duplicate_detection_is_false_positive(self):
        gts = {"s0": [gt(0, 10)]}
        dets = [det(0, 0, 0.9, 10), det(1, 0, 0.8, 10.5)]
        ap = ap_compute(dets, gts)[0]
        assert ap == brute_force_ap(dets, gts, 0.5)[0]
        assert ap == pytest.approx(1.0)  # the duplicate ranks below the TP

    def test_matching_is_per_scene(self):
        gts = {"s0": [gt(0, 10)], "s1": [gt(0, 10)]}
        dets = [det(0, 0, 0.9, 10, scene="s0"), det(0, 0, 0.8, 10, scene="s1")]
        assert ap_compute(dets, gts)[0] == pytest.approx(1.0)

    def test_highest_iou_unmatched_gt_wins(self):
        # second detection must claim the second, lower-IoU ground truth
        gts = {"s0": [gt(0, 10), gt(0, 13)]}
        dets = [det(0, 0, 0.9, 10), det(1, 0, 0.8, 11)]
        ap = ap_compute(dets, gts)[0]
        assert ap == pytest.approx(1.0)

    def test_classes_partitioned(self):
        gts = {"s0": [gt(0, 10), gt(1, 40)]}
        dets = [det(0, 1, 0.9, 10), det(1, 0, 0.8, 40)]  # classes swapped
        aps = ap_compute(dets, gts)
        assert aps[0] == 0.0 and aps[1] == 0.0

    def test_invalid_interpolation(self):
        with pytest.raises(InputError):
            ap_compute([], {"s": [gt(0, 10)]}, interpolation="voc12")

    def test_invalid_iou_threshold(self):
        with pytest.raises(InputError):
            ap_compute([], {"s": [gt(0, 10)]}, iou_thr=0.0)

    def test_all_points_variant_on_hand_case(self):
        gts = {"s0": [gt(0, 10), gt(0, 40)]}
        dets = [det(0, 0, 0.9, 10), det(1, 0, 0.8, 200), det(2, 0, 0.7, 40)]
        # envelope: p=1 up to r=1/2, then p=2/3 up to r=1
        ap = ap_compute(dets, gts, interpolation="all_points")[0]
        assert ap == pytest.approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0), abs=1e-12)

    def test_randomized_instances_match_brute_force_exactly(self):
        for trial in range(150):
            rng = RngStream(1000 + trial, ("ap",))
            n_classes = 1 + int(rng.integers(0, 3))
            scenes = ["a", "b"]
            gts = {}
            for sid in scenes:
                gts[sid] = [
                    gt(int(rng.integers(0, n_classes)),
                       cx=float(10 + rng.uniform() * 180),
                       cy=float(10 + rng.uniform() * 180),
                       w=float(4 + rng.uniform() * 10),
                       h=float(4 + rng.uniform() * 10),
                       theta=float((rng.uniform() - 0.5) * 3))
                    for _ in range(int(rng.integers(1, 6)))
                ]
            dets = []
            for k in range(int(rng.integers(0, 21))):
                sid = scenes[int(rng.integers(0, 2))]
                base = gts[sid][int(rng.integers(0, len(gts[sid])))]
                jitter = float(rng.uniform() * 14)
                dets.append(Detection(
                    scene_id=sid, proposal_id=k,
                    class_id=int(rng.integers(0, n_classes)),
                    score=float(rng.uniform()),
                    box=RotatedBox(base.box.cx + jitter, base.box.cy,
                                   base.box.w, base.box.h, base.box.theta),
                    uncertainty=0.0))
            got = ap_compute(dets, gts, iou_thr=0.5)
            expected = brute_force_ap(dets, gts, 0.5)
            assert got == expected  # exact float equality


class TestMeanAp:
    def test_mean_over_classes_with_gt(self):
        assert mean_ap({0: 1.0, 1: 0.5}) == pytest.approx(0.75)

    def test_empty(self):
        assert mean_ap({}) == 0.0


class TestEvalReport:
    def test_flip_fraction(self):
        rep = EvalReport(per_class_ap={0: 1.0}, map_score=1.0,
                         baseline_per_class_ap={0: 0.5}, baseline_map=0.5,
                         n_scenes=3, n_ground_truths=10,
                         refined_target_count=4, flipped_count=1)
        assert rep.flip_fraction == 0.25

    def test_validate_range(self):
        rep = EvalReport(per_class_ap={0: 1.5}, map_score=1.5,
                         baseline_per_class_ap={}, baseline_map=0.0,
                         n_scenes=1, n_ground_truths=1,
                         refined_target_count=0, flipped_count=0)
        with pytest.raises(InputError):
            rep.validate()
