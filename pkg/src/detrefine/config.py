"""Engine configuration and the flat key-value config file format.

Config files are plain "key = value" lines ('#' starts a comment). Keys are
dataclass field names; one file configures both the engine and the
synthetic generator, which share the class-count and feature-shape keys.
Confusable pairs are written as "0:1,2:3".
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import InputError
from .graph import WEIGHT_MODES
from .metrics import INTERPOLATIONS
from .synthetic import SyntheticConfig


@dataclass
class EngineConfig:
    # model dimensions
    num_classes: int = 15
    feature_channels: int = 256
    feature_height: int = 7
    feature_width: int = 7
    head_hidden: int = 1024
    down_channels: int | None = None     # default: feature_channels / 2
    embed_dim: int = 16
    gcn1_channels: int | None = None     # default: fused width / 2
    gcn2_channels: int | None = None     # default: gcn1 / 4
    star_hidden: int = 1024
    # MC dropout and NMS
    mc_passes: int = 50
    dropout_ratio: float = 0.2
    score_threshold: float = 0.05
    nms_iou: float = 0.5
    relax_divisor: float = 10.0
    relax_mode: str = "score"
    per_class_nms: bool = True
    # graph construction
    spatial_threshold: float = 50.0
    semantic_threshold: float = 10.0
    graph_cap: int = 100
    edge_weight_mode: str = "reciprocal_product"
    use_spatial_edges: bool = True
    use_semantic_edges: bool = True
    # losses and refinement
    temperature: float = 0.1
    reg_loss_weight: float = 1.0
    refine_loss_weight: float = 1.0
    use_class_embedding: bool = True
    use_uncertainty_weights: bool = True
    merge_refined: bool = True
    # training schedule
    epochs: int = 12
    batch_scenes: int = 4
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    momentum: float = 0.0
    refine_warmup_epochs: int = 0
    seed: int = 0
    eval_workers: int = 1
    # evaluation
    eval_iou: float = 0.5
    ap_interpolation: str = "voc11"

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        return (self.feature_channels, self.feature_height, self.feature_width)

    @property
    def num_labels(self) -> int:
        return self.num_classes + 1

    @property
    def head_in_dim(self) -> int:
        return self.feature_channels * self.feature_height * self.feature_width

    def validate(self) -> "EngineConfig":
        if self.num_classes < 1:
            raise InputError("num_classes must be at least 1")
        if not 0.0 <= self.dropout_ratio < 1.0:
            raise InputError(f"dropout_ratio must be in [0, 1), got {self.dropout_ratio}")
        if self.mc_passes < 1:
            raise InputError("mc_passes must be at least 1")
        if not 0.0 < self.nms_iou <= 1.0:
            raise InputError(f"nms_iou must be in (0, 1], got {self.nms_iou}")
        if self.relax_mode not in ("score", "iou"):
            raise InputError(f"relax_mode must be score or iou, got {self.relax_mode!r}")
        if self.edge_weight_mode not in WEIGHT_MODES:
            raise InputError(f"unknown edge_weight_mode {self.edge_weight_mode!r}")
        if self.ap_interpolation not in INTERPOLATIONS:
            raise InputError(f"unknown ap_interpolation {self.ap_interpolation!r}")
        if self.temperature <= 0:
            raise InputError("temperature must be positive")
        if self.graph_cap < 1:
            raise InputError("graph_cap must be positive")
        if self.epochs < 1 or self.batch_scenes < 1:
            raise InputError("epochs and batch_scenes must be positive")
        if self.eval_workers < 1:
            raise InputError("eval_workers must be positive")
        return self


def parse_flat_text(text: str) -> dict[str, str]:
    """Parse 'key = value' lines; later keys override earlier ones."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(name: str, text: str, annotation):
    txt = text.strip()
    try:
        if annotation in ("int", int):
            return int(txt)
        if annotation in ("float", float):
            return float(txt)
        if annotation in ("bool", bool):
            low = txt.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {txt!r}")
        if annotation in ("str", str):
            return txt
        if annotation in ("int | None", "int|None"):
            return None if txt.lower() in ("none", "") else int(txt)
        if annotation == "tuple":
            if not txt:
                return ()
            pairs = []
            for chunk in txt.split(","):
                a, b = chunk.split(":")
                pairs.append((int(a), int(b)))
            return tuple(pairs)
    except (ValueError, TypeError) as exc:
        raise InputError(f"config key {name}: {exc}") from exc
    raise InputError(f"config key {name}: unsupported type {annotation!r}")


def _fill_from_flat(cls, flat: dict[str, str], base=None):
    kwargs = {}
    consumed = set()
    for field in dataclasses.fields(cls):
        if not field.init or field.name.startswith("_"):
            continue
        if field.name in flat:
            kwargs[field.name] = _coerce(field.name, flat[field.name], field.type)
            consumed.add(field.name)
        elif base is not None:
            kwargs[field.name] = getattr(base, field.name)
    return cls(**kwargs), consumed


def load_configs(path=None, overrides: dict[str, str] | None = None):
    """Engine plus synthetic config from one flat file and CLI overrides."""
    flat: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise InputError(f"config file not found: {p}")
        flat.update(parse_flat_text(p.read_text()))
    if overrides:
        flat.update({k: str(v) for k, v in overrides.items()})
    engine, used_e = _fill_from_flat(EngineConfig, flat)
    synthetic, used_s = _fill_from_flat(SyntheticConfig, flat)
    unknown = set(flat) - used_e - used_s
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    return engine.validate(), synthetic.validate()


def format_flat_config(cfg) -> str:
    """Render a dataclass config back to the flat key-value format."""
    lines = []
    for field in dataclasses.fields(cfg):
        if not field.init or field.name.startswith("_"):
            continue
        value = getattr(cfg, field.name)
        if isinstance(value, tuple):
            value = ",".join(f"{a}:{b}" for a, b in value)
        lines.append(f"{field.name} = {value}")
    return "\n".join(lines) + "\n"
