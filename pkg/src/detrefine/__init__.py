"""Uncertainty-guided graph refinement for rotated-box object detections.

The engine consumes per-proposal pooled feature tensors (from the
interchange format or the built-in synthetic generator), measures
per-object uncertainty with lightweight MC dropout, builds a directed
certain-to-uncertain object graph from spatial and semantic closeness,
refines uncertain objects with a weighted two-layer GCN, and evaluates
with rotated-box AP.
"""

from .config import EngineConfig, load_configs
from .dataio import DatasetHeader, load_dataset, load_scene, write_dataset
from .errors import InputError, InternalError
from .graph import ObjectGraph, build_graph, split_by_uncertainty
from .heads import HeadParams, decode_box, encode_box
from .metrics import EvalReport, ap_compute, mean_ap
from .pipeline import (
    Model,
    SceneDetections,
    detect_scene,
    evaluate,
    init_model,
    load_model,
    save_model,
    train,
)
from .rbox import ConvexPolygon, RotatedBox, diag_len, intersection_area, nms, rotated_iou
from .records import Detection, GroundTruth, Proposal, SceneRecord
from .refine import RefinerParams, merge_results, uncertainty_weights
from .rng import RngStream
from .synthetic import SyntheticConfig, generate_dataset, generate_synthetic_scene
from .uncertainty import McDetection, mc_detect, relaxed_nms, uncertainty_scalar

__version__ = "0.1.0"

__all__ = [
    "EngineConfig", "load_configs",
    "DatasetHeader", "load_dataset", "load_scene", "write_dataset",
    "InputError", "InternalError",
    "ObjectGraph", "build_graph", "split_by_uncertainty",
    "HeadParams", "decode_box", "encode_box",
    "EvalReport", "ap_compute", "mean_ap",
    "Model", "SceneDetections", "detect_scene", "evaluate", "init_model",
    "load_model", "save_model", "train",
    "ConvexPolygon", "RotatedBox", "diag_len", "intersection_area", "nms",
    "rotated_iou",
    "Detection", "GroundTruth", "Proposal", "SceneRecord",
    "RefinerParams", "merge_results", "uncertainty_weights",
    "RngStream",
    "SyntheticConfig", "generate_dataset", "generate_synthetic_scene",
    "McDetection", "mc_detect", "relaxed_nms", "uncertainty_scalar",
    "__version__",
]
