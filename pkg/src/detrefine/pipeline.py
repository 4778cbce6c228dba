"""End-to-end orchestration: training, inference, and evaluation.

The per-scene inference path: MC-dropout detection over every proposal,
relaxed NMS, uncertainty split with the node cap, graph construction, GCN
refinement, replacement of target-class predictions, and a final NMS at the
standard threshold. Training runs the same path with dropout active and
adds the detection and refinement losses.

Determinism: all randomness is drawn from streams addressed by
(seed, phase, scene id), so results are independent of scene order inside a
batch and of how many workers evaluate scenes concurrently.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import EngineConfig
from .errors import InputError, InternalError
from .graph import ObjectGraph, build_graph, split_by_uncertainty
from .heads import HeadParams, init_head_params, initial_loss
from .metrics import EvalReport, ap_compute, mean_ap
from .numeric import sgd_step, zero_grads
from .rbox import diag_len, nms
from .records import Detection, Proposal, SceneRecord, foreground_class
from .refine import (
    RefinerParams,
    gcn_forward_batch,
    init_refiner_params,
    merge_results,
    node_features_batch,
    refine_classify_batch,
    refinement_loss,
    total_loss,
    uncertainty_weights,
)
from .rng import RngStream
from .uncertainty import apply_mc_detection, relaxed_nms

CHECKPOINT_FORMAT = "detrefine-model"


@dataclass
class Model:
    heads: HeadParams
    refiner: RefinerParams

    def tensors(self):
        return self.heads.tensors() + self.refiner.tensors()

    def named_values(self) -> dict[str, np.ndarray]:
        return {t.name: t.value for t in self.tensors()}


def init_model(cfg: EngineConfig) -> Model:
    rng = RngStream(cfg.seed, ("init",))
    heads = init_head_params(cfg.head_in_dim, cfg.head_hidden, cfg.num_labels,
                             rng.substream("heads"))
    refiner = init_refiner_params(
        cfg.feature_channels, (cfg.feature_height, cfg.feature_width),
        cfg.num_labels, rng.substream("refiner"),
        down_channels=cfg.down_channels, embed_dim=cfg.embed_dim,
        gcn1_channels=cfg.gcn1_channels, gcn2_channels=cfg.gcn2_channels,
        star_hidden=cfg.star_hidden,
    )
    return Model(heads=heads, refiner=refiner)


def _model_fingerprint(cfg: EngineConfig) -> dict:
    return {
        "num_classes": cfg.num_classes,
        "feature_shape": list(cfg.feature_shape),
        "head_hidden": cfg.head_hidden,
        "embed_dim": cfg.embed_dim,
        "star_hidden": cfg.star_hidden,
    }


def save_model(path, model: Model, cfg: EngineConfig) -> None:
    meta = {"format": CHECKPOINT_FORMAT, "fingerprint": _model_fingerprint(cfg)}
    save_checkpoint(path, model.named_values(), meta)


def load_model(path, cfg: EngineConfig) -> Model:
    tensors, meta = load_checkpoint(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"{path} is not a detection-refiner checkpoint")
    if meta.get("fingerprint") != _model_fingerprint(cfg):
        raise InputError(
            f"checkpoint does not match the configuration: {meta.get('fingerprint')} "
            f"vs {_model_fingerprint(cfg)}"
        )
    model = init_model(cfg)
    for t in model.tensors():
        if t.name not in tensors:
            raise InputError(f"checkpoint is missing tensor {t.name!r}")
        if tensors[t.name].shape != t.value.shape:
            raise InputError(
                f"checkpoint tensor {t.name!r} has shape {tensors[t.name].shape}, "
                f"expected {t.value.shape}"
            )
        t.value[...] = tensors[t.name]
    return model


@dataclass
class SceneDetections:
    """Everything the inference path produced for one scene."""

    scene_id: str
    survivors: list[Proposal]
    source_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    graph: ObjectGraph
    initial: list[Detection]
    merged: list[Detection]
    final: list[Detection]
    baseline_final: list[Detection]
    flipped: int


def _final_nms(detections: list[Detection], cfg: EngineConfig) -> list[Detection]:
    groups: dict[int, list[Detection]] = {}
    if cfg.per_class_nms:
        for det in detections:
            groups.setdefault(det.class_id, []).append(det)
    else:
        groups[0] = list(detections)
    kept: list[Detection] = []
    for _, group in sorted(groups.items()):
        idx = nms([d.box for d in group], [d.score for d in group],
                  iou_thr=cfg.nms_iou, score_thr=cfg.score_threshold)
        kept.extend(group[i] for i in idx)
    kept.sort(key=lambda d: (-d.score, d.proposal_id))
    return kept


def _refinement_forward(scene: SceneRecord, model: Model, cfg: EngineConfig,
                        rng: RngStream, training: bool):
    """Shared portion of training and inference after the initial heads.

    Returns (survivors, sources, targets, graph, retained, logits, backward)
    where logits covers the retained nodes in source+target order; backward
    is None at inference.
    """
    detected = apply_mc_detection(scene.proposals, model.heads, cfg.mc_passes,
                                  cfg.dropout_ratio, rng.substream("mc"))
    survivors = relaxed_nms(detected, cfg.score_threshold, cfg.nms_iou,
                            per_class=cfg.per_class_nms, mode=cfg.relax_mode,
                            relax_divisor=cfg.relax_divisor)
    v_src, v_dst = split_by_uncertainty(survivors, cfg.graph_cap)
    retained = v_src + v_dst
    graph = build_graph(
        v_src, v_dst,
        cfg.spatial_threshold if cfg.use_spatial_edges else 0.0,
        cfg.semantic_threshold if cfg.use_semantic_edges else 0.0,
        diag_len(scene.image_w, scene.image_h), cfg.edge_weight_mode,
    )
    if not retained:
        return survivors, v_src, v_dst, graph, retained, None, None

    feats = np.stack([p.features for p in retained])
    class_ids = (np.array([int(np.argmax(p.p)) for p in retained])
                 if cfg.use_class_embedding else None)
    node_feats, back_nodes = node_features_batch(class_ids, feats, model.refiner)
    graph_feats, back_gcn = gcn_forward_batch(graph, node_feats, model.refiner)
    logits, back_star = refine_classify_batch(
        feats, graph_feats, model.refiner, rng.substream("star"),
        cfg.dropout_ratio if training else 0.0, training,
    )

    def backward(dlogits):
        back_nodes(back_gcn(back_star(dlogits)))

    return survivors, v_src, v_dst, graph, retained, logits, backward


def detect_scene(scene: SceneRecord, model: Model, cfg: EngineConfig,
                 rng: RngStream | None = None) -> SceneDetections:
    """Full inference path for one scene."""
    if rng is None:
        rng = RngStream(cfg.seed, ("eval", scene.scene_id))
    survivors, v_src, v_dst, graph, retained, logits, _ = _refinement_forward(
        scene, model, cfg, rng, training=False)
    initial = [
        Detection(scene_id=scene.scene_id, proposal_id=p.id,
                  class_id=foreground_class(p.p), score=p.score, box=p.box,
                  uncertainty=p.uncertainty)
        for p in survivors
    ]
    refined_logits = ({p.id: logits[i] for i, p in enumerate(retained)}
                      if logits is not None else {})
    target_ids = tuple(p.id for p in v_dst)
    if cfg.merge_refined:
        merged = merge_results(initial, refined_logits, target_ids)
    else:
        merged = initial
    initial_by_id = {d.proposal_id: d for d in initial}
    flipped = sum(
        1 for d in merged
        if d.refined and d.class_id != initial_by_id[d.proposal_id].class_id
    )
    return SceneDetections(
        scene_id=scene.scene_id, survivors=survivors,
        source_ids=tuple(p.id for p in v_src), target_ids=target_ids,
        graph=graph, initial=initial, merged=merged,
        final=_final_nms(merged, cfg),
        baseline_final=_final_nms(initial, cfg),
        flipped=flipped,
    )


@dataclass
class TrainHistory:
    epochs: list[int] = field(default_factory=list)
    detection_loss: list[float] = field(default_factory=list)
    refinement_loss: list[float] = field(default_factory=list)
    combined_loss: list[float] = field(default_factory=list)


def train(scenes: list[SceneRecord], cfg: EngineConfig) -> tuple[Model, TrainHistory]:
    """Joint training of the detection heads and the refiner."""
    if not scenes:
        raise InputError("training needs a non-empty dataset")
    for scene in scenes:
        for prop in scene.proposals:
            if prop.gt_class is None:
                raise InputError(
                    f"scene {scene.scene_id}: proposal {prop.id} lacks gt_class"
                )
    model = init_model(cfg)
    tensors = model.tensors()
    momentum_buffers: dict = {}
    history = TrainHistory()

    for epoch in range(cfg.epochs):
        order = RngStream(cfg.seed, ("shuffle", epoch)).permutation(len(scenes))
        sum_obj = sum_ref = 0.0
        refine_on = epoch >= cfg.refine_warmup_epochs
        for start in range(0, len(order), cfg.batch_scenes):
            zero_grads(tensors)
            for scene_pos in order[start:start + cfg.batch_scenes]:
                scene = scenes[int(scene_pos)]
                rng = RngStream(cfg.seed, ("train", epoch, scene.scene_id))
                losses, back_obj = initial_loss(
                    scene.proposals, model.heads, cfg.reg_loss_weight,
                    rng.substream("obj"), cfg.dropout_ratio, training=True)
                back_obj(1.0)
                l_ref = 0.0
                if refine_on:
                    _, _, _, _, retained, logits, back_ref = _refinement_forward(
                        scene, model, cfg, rng, training=True)
                    if retained:
                        weights = (
                            uncertainty_weights(
                                np.array([p.uncertainty for p in retained]),
                                cfg.temperature)
                            if cfg.use_uncertainty_weights
                            else np.ones(len(retained))
                        )
                        l_ref, back_lref = refinement_loss(
                            logits, [p.gt_class for p in retained], weights)
                        if cfg.refine_loss_weight != 0.0:
                            back_ref(back_lref(cfg.refine_loss_weight))
                sum_obj += losses.total
                sum_ref += l_ref
                total_loss(losses.total, l_ref, cfg.refine_loss_weight)
            sgd_step(tensors, cfg.learning_rate, cfg.weight_decay,
                     cfg.momentum, momentum_buffers)
        n = len(scenes)
        history.epochs.append(epoch)
        history.detection_loss.append(sum_obj / n)
        history.refinement_loss.append(sum_ref / n)
        history.combined_loss.append((sum_obj + cfg.refine_loss_weight * sum_ref) / n)
    return model, history


def evaluate(scenes: list[SceneRecord], model: Model, cfg: EngineConfig,
             workers: int | None = None,
             keep_scene_results: bool = False):
    """Evaluate the refined path and the unrefined baseline on a dataset.

    Returns an EvalReport, or (EvalReport, [SceneDetections]) when
    keep_scene_results is set. Scene-level work is read-only over the model,
    so it may run on several worker threads; results are reduced in scene
    order and are bit-identical for any worker count.
    """
    if workers is None:
        workers = cfg.eval_workers
    if workers < 1:
        raise InputError("workers must be positive")

    def run(scene: SceneRecord) -> SceneDetections:
        return detect_scene(scene, model, cfg)

    if workers == 1:
        results = [run(s) for s in scenes]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, scenes))

    gts = {s.scene_id: list(s.gt_objects) for s in scenes}
    final_dets = [d for r in results for d in r.final]
    base_dets = [d for r in results for d in r.baseline_final]
    per_class = ap_compute(final_dets, gts, cfg.eval_iou, cfg.ap_interpolation)
    base_per_class = ap_compute(base_dets, gts, cfg.eval_iou, cfg.ap_interpolation)
    report = EvalReport(
        per_class_ap=per_class,
        map_score=mean_ap(per_class),
        baseline_per_class_ap=base_per_class,
        baseline_map=mean_ap(base_per_class),
        n_scenes=len(scenes),
        n_ground_truths=sum(len(g) for g in gts.values()),
        refined_target_count=sum(len(r.target_ids) for r in results),
        flipped_count=sum(r.flipped for r in results),
    ).validate()
    if keep_scene_results:
        return report, results
    return report


def check_dataset_compatible(header, cfg: EngineConfig) -> None:
    """Dataset header must agree with the engine configuration."""
    if header.num_classes != cfg.num_classes:
        raise InputError(
            f"dataset has {header.num_classes} classes, config expects {cfg.num_classes}"
        )
    if tuple(header.feature_shape) != cfg.feature_shape:
        raise InputError(
            f"dataset feature shape {tuple(header.feature_shape)} does not match "
            f"config {cfg.feature_shape}"
        )
