import math

import numpy as np
import pytest

from detrefine.errors import InputError
from detrefine.graph import spatial_distance
from detrefine.synthetic import SyntheticConfig, generate_dataset, generate_synthetic_scene


def nearest_prototype(features, prototypes):
    """Feature-only Bayes stand-in: closest prototype, ties to the lower class."""
    dists = [float(np.sum((features - p) ** 2)) for p in prototypes]
    return int(np.argmin(dists))


class TestDeterminism:
    def test_same_seed_identical_scene(self):
        cfg = SyntheticConfig()
        a = generate_synthetic_scene(cfg, seed=5, scene_index=2)
        b = generate_synthetic_scene(SyntheticConfig(), seed=5, scene_index=2)
        assert a.scene_id == b.scene_id
        assert len(a.proposals) == len(b.proposals)
        for pa, pb in zip(a.proposals, b.proposals):
            assert pa.box == pb.box
            assert pa.gt_class == pb.gt_class
            np.testing.assert_array_equal(pa.features, pb.features)
        assert a.gt_objects == b.gt_objects

    def test_different_scene_index_differs(self):
        cfg = SyntheticConfig()
        a = generate_synthetic_scene(cfg, seed=5, scene_index=0)
        b = generate_synthetic_scene(cfg, seed=5, scene_index=1)
        assert a.gt_objects != b.gt_objects


class TestSeparableConfig:
    def test_noise_free_unambiguous_data_is_perfectly_separable(self):
        cfg = SyntheticConfig(noise=0.0, confusable_pairs=())
        protos = cfg.prototypes()[: cfg.num_classes]
        correct = total = 0
        for scene in generate_dataset(cfg, seed=1, n_scenes=5):
            for prop in scene.proposals:
                if prop.gt_class == cfg.background_class:
                    continue
                total += 1
                correct += nearest_prototype(prop.features, protos) == prop.gt_class
        assert total > 0
        assert correct == total


class TestConfusablePosterior:
    def test_feature_only_bayes_is_coin_flip_but_context_resolves(self):
        cfg = SyntheticConfig()
        protos = cfg.prototypes()[: cfg.num_classes]
        ambiguous = set(cfg.ambiguous_classes)
        context_map = cfg.context_for()
        member_for_context = {v: k for k, v in context_map.items()}

        feature_hits = feature_total = 0
        context_hits = context_total = 0
        for scene in generate_dataset(cfg, seed=2, n_scenes=20):
            # ground-truth objects of ambiguous classes
            for i, gt in enumerate(scene.gt_objects):
                if gt.class_id not in ambiguous:
                    continue
                prop = scene.proposals[i]
                assert prop.gt_class == gt.class_id
                feature_total += 1
                feature_hits += nearest_prototype(prop.features, protos) == gt.class_id
                # context rule: the nearest context-class object decides
                best, best_cls = math.inf, None
                for other in scene.gt_objects:
                    if other.class_id in member_for_context:
                        d = math.hypot(other.box.cx - gt.box.cx,
                                       other.box.cy - gt.box.cy)
                        if d < best:
                            best, best_cls = d, other.class_id
                if best_cls is not None:
                    context_total += 1
                    context_hits += member_for_context[best_cls] == gt.class_id

        assert feature_total > 100
        # shared prototypes: the feature-only rule cannot beat a coin flip
        assert abs(feature_hits / feature_total - 0.5) < 0.15
        # cluster context disambiguates essentially always
        assert context_hits / context_total > 0.99


class TestLayout:
    def test_object_count_in_range(self):
        cfg = SyntheticConfig()
        for scene in generate_dataset(cfg, seed=3, n_scenes=10):
            assert 25 <= len(scene.gt_objects) <= cfg.max_objects

    def test_proposals_cover_objects_plus_background(self):
        cfg = SyntheticConfig()
        scene = generate_synthetic_scene(cfg, seed=4)
        n_obj = len(scene.gt_objects)
        assert len(scene.proposals) > n_obj
        for prop in scene.proposals[n_obj:]:
            assert prop.gt_class == cfg.background_class
            assert prop.gt_box is None

    def test_degraded_objects_are_isolated(self):
        cfg = SyntheticConfig()
        scene = generate_synthetic_scene(cfg, seed=6)
        context_classes = set(cfg.context_pool)
        # degraded objects are the trailing context-class ground truths that
        # sit far from every other object
        isolated = []
        for i, gt in enumerate(scene.gt_objects):
            dmin = min(
                (math.hypot(gt.box.cx - o.box.cx, gt.box.cy - o.box.cy)
                 for j, o in enumerate(scene.gt_objects) if j != i),
                default=math.inf,
            )
            if dmin >= cfg.isolation_dist - 1e-6:
                isolated.append((i, gt, dmin))
        assert isolated, "expected at least one isolated degraded object"
        for _, gt, _ in isolated:
            assert gt.class_id in context_classes

    def test_prior_boxes_overlap_ground_truth(self):
        from detrefine.rbox import rotated_iou

        cfg = SyntheticConfig()
        scene = generate_synthetic_scene(cfg, seed=7)
        for prop in scene.proposals:
            if prop.gt_box is not None:
                assert rotated_iou(prop.box, prop.gt_box) > 0.5

    def test_cluster_members_within_reach(self):
        # every ambiguous object has a context object of its cluster within
        # twice the cluster radius
        cfg = SyntheticConfig()
        scene = generate_synthetic_scene(cfg, seed=8)
        ambiguous = set(cfg.ambiguous_classes)
        context_map = cfg.context_for()
        props = scene.proposals
        for prop in props:
            if prop.gt_class in ambiguous:
                ctx = context_map[prop.gt_class]
                dists = [spatial_distance(prop, o) for o in props
                         if o.gt_class == ctx]
                assert dists and min(dists) <= 2 * cfg.cluster_radius + 10


class TestConfigValidation:
    def test_pair_class_out_of_range(self):
        with pytest.raises(InputError):
            SyntheticConfig(confusable_pairs=((0, 99),)).validate()

    def test_class_in_two_pairs(self):
        with pytest.raises(InputError):
            SyntheticConfig(confusable_pairs=((0, 1), (1, 2))).validate()

    def test_not_enough_context_classes(self):
        with pytest.raises(InputError):
            SyntheticConfig(num_classes=3, confusable_pairs=((0, 1), (2, 3))).validate()

    def test_shared_prototypes_for_pairs(self):
        cfg = SyntheticConfig()
        protos = cfg.prototypes()
        for a, b in cfg.confusable_pairs:
            np.testing.assert_array_equal(protos[a], protos[b])
        assert not np.array_equal(protos[4], protos[5])
