"""Synthetic scene generator.

Desk-scale stand-in for aerial imagery, built so that graph context carries
real signal:

* Clustered layout. Each scene holds several well-separated clusters. A
  cluster hosts objects of one "member" class together with objects of its
  associated context class.
* Confusable pairs. The two member classes of a confusable pair share one
  feature prototype exactly, so no per-object classifier can tell them
  apart (marginal accuracy 0.5 on balanced data). The context class placed
  in the same cluster differs between the pair's sides, so nearby-object
  evidence disambiguates completely.
* Degraded singletons. A few context-class objects appear isolated, far
  from every cluster, with strongly amplified feature noise. Their own
  features are mediocre evidence, but feature-space neighbors are still
  same-class, so semantic (not spatial) edges can route clean class
  evidence to them.
* Background clutter. Extra proposals with a background prototype and no
  ground-truth box.

Every proposal corresponds to either one object (prior box jittered off the
ground truth) or one clutter box. Generation is fully determined by
(config, seed, scene index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .rbox import RotatedBox, normalize_angle
from .records import GroundTruth, Proposal, SceneRecord
from .rng import RngStream


@dataclass
class SyntheticConfig:
    num_classes: int = 8
    feature_channels: int = 32
    feature_height: int = 3
    feature_width: int = 3
    image_w: float = 1024.0
    image_h: float = 1024.0
    confusable_pairs: tuple = ((0, 1), (2, 3))
    prototype_seed: int = 7
    prototype_scale: float = 1.0
    noise: float = 0.3
    degraded_noise_scale: float = 4.0
    clusters_min: int = 5
    clusters_max: int = 7
    ambiguous_min: int = 3
    ambiguous_max: int = 4
    context_min: int = 3
    context_max: int = 5
    degraded_min: int = 2
    degraded_max: int = 5
    background_min: int = 5
    background_max: int = 10
    cluster_radius: float = 52.0
    member_sep: float = 30.0
    cluster_sep: float = 240.0
    isolation_dist: float = 200.0
    border_margin: float = 80.0
    box_min: float = 18.0
    box_max: float = 30.0
    prior_center_jitter: float = 1.25
    prior_size_jitter: float = 0.05
    prior_angle_jitter: float = 0.03
    max_objects: int = 80
    _prototypes: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        return (self.feature_channels, self.feature_height, self.feature_width)

    @property
    def background_class(self) -> int:
        return self.num_classes

    @property
    def ambiguous_classes(self) -> list[int]:
        return sorted(c for pair in self.confusable_pairs for c in pair)

    @property
    def context_pool(self) -> list[int]:
        amb = set(self.ambiguous_classes)
        return [c for c in range(self.num_classes) if c not in amb]

    def context_for(self) -> dict[int, int]:
        """Member class -> the context class hosted in its clusters."""
        pool = self.context_pool
        mapping: dict[int, int] = {}
        i = 0
        for a, b in self.confusable_pairs:
            mapping[a] = pool[i % len(pool)]
            mapping[b] = pool[(i + 1) % len(pool)]
            i += 2
        return mapping

    def validate(self) -> "SyntheticConfig":
        if self.num_classes < 1:
            raise InputError("need at least one foreground class")
        seen = set()
        for pair in self.confusable_pairs:
            if len(pair) != 2:
                raise InputError(f"confusable pair {pair} must have two classes")
            for c in pair:
                if not 0 <= c < self.num_classes:
                    raise InputError(f"confusable class {c} out of range")
                if c in seen:
                    raise InputError(f"class {c} appears in two confusable pairs")
                seen.add(c)
        if self.confusable_pairs and len(self.context_pool) < 2 * len(self.confusable_pairs):
            raise InputError(
                "need two context classes per confusable pair; add plain classes"
            )
        if not 0 <= self.noise < math.inf or self.noise < 0:
            raise InputError(f"noise must be non-negative, got {self.noise}")
        if self.box_min <= 0 or self.box_max < self.box_min:
            raise InputError("invalid box size range")
        return self

    def prototypes(self) -> np.ndarray:
        """(num_classes + 1, C, H, W); confusable pairs share one prototype
        and the final row belongs to the background."""
        if self._prototypes is None:
            rng = RngStream(self.prototype_seed, ("prototypes",))
            protos = np.zeros((self.num_classes + 1, *self.feature_shape))
            for c in range(self.num_classes + 1):
                protos[c] = rng.substream(c).normal(self.feature_shape,
                                                    scale=self.prototype_scale)
            for a, b in self.confusable_pairs:
                protos[b] = protos[a]
            self._prototypes = protos
        return self._prototypes


def _place(rng: RngStream, n: int, lo, hi, min_sep: float, existing, max_tries=300):
    """Rejection-sample up to n points with a minimum separation."""
    points = []
    for _ in range(n):
        placed = False
        for _ in range(max_tries):
            x = lo[0] + rng.uniform() * (hi[0] - lo[0])
            y = lo[1] + rng.uniform() * (hi[1] - lo[1])
            if all(math.hypot(x - ex, y - ey) >= min_sep
                   for ex, ey in list(existing) + points):
                points.append((x, y))
                placed = True
                break
        if not placed:
            break
    return points


def _disc_points(rng: RngStream, n: int, center, radius, min_sep, max_tries=300):
    points = []
    for _ in range(n):
        for _ in range(max_tries):
            r = radius * math.sqrt(rng.uniform())
            a = rng.uniform() * 2.0 * math.pi
            x, y = center[0] + r * math.cos(a), center[1] + r * math.sin(a)
            if all(math.hypot(x - ex, y - ey) >= min_sep for ex, ey in points):
                points.append((x, y))
                break
        else:
            break
    return points


def _rand_box(rng: RngStream, cx, cy, cfg: SyntheticConfig) -> RotatedBox:
    w = cfg.box_min + rng.uniform() * (cfg.box_max - cfg.box_min)
    h = cfg.box_min + rng.uniform() * (cfg.box_max - cfg.box_min)
    theta = normalize_angle((rng.uniform() - 0.5) * math.pi)
    return RotatedBox(cx, cy, w, h, theta)


def _truncated(rng: RngStream, sigma: float) -> float:
    # prior jitter is clipped at two sigmas so priors always keep a healthy
    # overlap with their ground truth
    return float(np.clip(rng.normal() * sigma, -2.0 * sigma, 2.0 * sigma))


def _jittered_prior(rng: RngStream, gt_box: RotatedBox, cfg: SyntheticConfig,
                    image_w: float, image_h: float) -> RotatedBox:
    cx = min(max(gt_box.cx + _truncated(rng, cfg.prior_center_jitter), 1.0), image_w - 1.0)
    cy = min(max(gt_box.cy + _truncated(rng, cfg.prior_center_jitter), 1.0), image_h - 1.0)
    w = gt_box.w * (1.0 + _truncated(rng, cfg.prior_size_jitter))
    h = gt_box.h * (1.0 + _truncated(rng, cfg.prior_size_jitter))
    theta = gt_box.theta + _truncated(rng, cfg.prior_angle_jitter)
    return RotatedBox(cx, cy, max(w, 2.0), max(h, 2.0), theta)


def generate_synthetic_scene(config: SyntheticConfig, seed: int,
                             scene_index: int = 0) -> SceneRecord:
    """One deterministic scene; identical (config, seed, index) repeats bits."""
    cfg = config.validate()
    rng = RngStream(seed, ("synthetic", scene_index))
    layout = rng.substream("layout")
    feat_rng = rng.substream("features")
    prior_rng = rng.substream("priors")
    protos = cfg.prototypes()

    lo = (cfg.border_margin, cfg.border_margin)
    hi = (cfg.image_w - cfg.border_margin, cfg.image_h - cfg.border_margin)

    n_clusters = int(layout.integers(cfg.clusters_min, cfg.clusters_max + 1))
    centers = _place(layout.substream("centers"), n_clusters, lo, hi,
                     cfg.cluster_sep, existing=())

    # ordered (class, position, degraded?) object plan
    objects: list[tuple[int, tuple[float, float], bool]] = []
    context_map = cfg.context_for()
    amb_classes = cfg.ambiguous_classes
    member_order = [amb_classes[int(layout.integers(0, len(amb_classes)))]
                    if amb_classes else int(layout.integers(0, cfg.num_classes))
                    for _ in centers]
    # make sure both halves of each pair occur when there is room
    if amb_classes:
        for i, c in enumerate(amb_classes):
            if i < len(member_order):
                member_order[i] = c

    used_context: list[int] = []
    for k, center in enumerate(centers):
        crng = layout.substream("cluster", k)
        member = member_order[k]
        n_amb = int(crng.integers(cfg.ambiguous_min, cfg.ambiguous_max + 1))
        n_ctx = int(crng.integers(cfg.context_min, cfg.context_max + 1))
        if amb_classes:
            ctx_class = context_map[member]
            classes = [member] * n_amb + [ctx_class] * n_ctx
            used_context.append(ctx_class)
        else:
            classes = [member] * (n_amb + n_ctx)
        pts = _disc_points(crng.substream("points"), len(classes), center,
                           cfg.cluster_radius, cfg.member_sep)
        for cls, pt in zip(classes, pts):
            objects.append((cls, pt, False))

    if used_context:
        n_deg = int(layout.integers(cfg.degraded_min, cfg.degraded_max + 1))
        keep_away = [pt for _, pt, _ in objects] + centers
        deg_pts = _place(layout.substream("degraded"), n_deg, lo, hi,
                         cfg.isolation_dist, existing=keep_away)
        deg_rng = layout.substream("degraded-class")
        for pt in deg_pts:
            cls = used_context[int(deg_rng.integers(0, len(used_context)))]
            objects.append((cls, pt, True))

    objects = objects[:cfg.max_objects]

    gt_objects = []
    proposals = []
    for i, (cls, (cx, cy), degraded) in enumerate(objects):
        gt_box = _rand_box(layout.substream("box", i), cx, cy, cfg)
        gt_objects.append(GroundTruth(box=gt_box, class_id=cls))
        noise = cfg.noise * (cfg.degraded_noise_scale if degraded else 1.0)
        feats = protos[cls] + feat_rng.substream(i).normal(cfg.feature_shape,
                                                           scale=noise) if noise > 0 \
            else protos[cls].copy()
        prior = _jittered_prior(prior_rng.substream(i), gt_box, cfg,
                                cfg.image_w, cfg.image_h)
        proposals.append(Proposal(id=i, box=prior, features=np.asarray(feats),
                                  gt_class=cls, gt_box=gt_box))

    n_bg = int(layout.integers(cfg.background_min, cfg.background_max + 1))
    bg_rng = layout.substream("background")
    for j in range(n_bg):
        cx = lo[0] + bg_rng.uniform() * (hi[0] - lo[0])
        cy = lo[1] + bg_rng.uniform() * (hi[1] - lo[1])
        box = _rand_box(bg_rng.substream(j), cx, cy, cfg)
        noise = max(cfg.noise, 1e-12)
        feats = protos[cfg.background_class] + feat_rng.substream(
            "bg", j).normal(cfg.feature_shape, scale=noise)
        proposals.append(Proposal(id=len(objects) + j, box=box,
                                  features=np.asarray(feats),
                                  gt_class=cfg.background_class, gt_box=None))

    return SceneRecord(scene_id=f"s{seed}-{scene_index:04d}",
                       image_w=cfg.image_w, image_h=cfg.image_h,
                       proposals=proposals, gt_objects=gt_objects).validate()


def generate_dataset(config: SyntheticConfig, seed: int,
                     n_scenes: int) -> list[SceneRecord]:
    return [generate_synthetic_scene(config, seed, i) for i in range(n_scenes)]
