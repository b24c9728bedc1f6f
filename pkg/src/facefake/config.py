"""Run configuration: defaults, overridden by a YAML/JSON file, overridden by flags."""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .aggregation import AggregationConfig
from .classifier.scaling import BackboneConfig, build_variant
from .core import ConfigError
from .detector.cascade import CascadeConfig
from .detector.geometry import NMSMode, PyramidSpec
from .preprocess import SamplingPlan, SSIMParams
from .training import TrainingConfig

ENV_CONFIG = "FACEFAKE_CONFIG"


@dataclass
class DetectorSettings:
    scorer: str = "blob"
    weights: Optional[str] = None
    blob_context: float = 2.0
    stage_thresholds: tuple[float, ...] = (0.6, 0.7, 0.8)
    nms_thresholds: tuple[float, ...] = (0.7, 0.7, 0.7)
    nms_modes: tuple[str, ...] = ("UNION", "UNION", "MIN")
    min_face_size: float = 20.0
    scale_factor: float = 0.709
    stage1_input: int = 12
    detector_input_cap: int = 640


@dataclass
class PreprocessSettings:
    frames_per_video: int = 32
    margin: float = 0.30
    ssim_window: int = 7
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03


@dataclass
class ClassifierSettings:
    variant: str = "B5"
    width_budget: float = 1.0
    input_resolution: Optional[int] = None
    dropout: Optional[float] = None
    drop_connect: float = 0.2


@dataclass
class TrainingSettings:
    base_lr: float = 0.01
    momentum: float = 0.9
    poly_power: float = 1.0
    total_steps: int = 2000
    batch_size: Optional[int] = None
    label_smoothing_eps: float = 0.05
    holdout_folders: tuple[int, ...] = (0, 1, 2)
    validate_every: int = 200
    hflip: bool = True


@dataclass
class AggregationSettings:
    low_conf: float = 0.6
    high_conf: float = 0.9
    high_weight: float = 2.0
    base_weight: float = 1.0
    fallback: str = "MEAN_ALL"
    confidence_mode: str = "FOLDED"


@dataclass
class PathSettings:
    data_root: Optional[str] = None
    checkpoint: Optional[str] = None
    labels: Optional[str] = None


@dataclass
class RunConfig:
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    preprocess: PreprocessSettings = field(default_factory=PreprocessSettings)
    classifier: ClassifierSettings = field(default_factory=ClassifierSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    aggregation: AggregationSettings = field(default_factory=AggregationSettings)
    paths: PathSettings = field(default_factory=PathSettings)
    seed: int = 0
    workers: int = 1

    # -- domain objects -------------------------------------------------

    def cascade_config(self) -> CascadeConfig:
        d = self.detector
        try:
            return CascadeConfig(
                stage_thresholds=tuple(d.stage_thresholds),
                nms_thresholds=tuple(d.nms_thresholds),
                nms_modes=tuple(NMSMode(m) for m in d.nms_modes),
                pyramid=PyramidSpec(d.min_face_size, d.scale_factor, d.stage1_input),
                detector_input_cap=d.detector_input_cap,
            )
        except ValueError as exc:
            raise ConfigError(f"detector: {exc}") from exc

    def sampling_plan(self) -> SamplingPlan:
        return _checked("preprocess", SamplingPlan, self.preprocess.frames_per_video)

    def ssim_params(self) -> SSIMParams:
        p = self.preprocess
        return _checked("preprocess", SSIMParams, p.ssim_window, p.ssim_k1, p.ssim_k2)

    def backbone_config(self) -> BackboneConfig:
        c = self.classifier
        try:
            return build_variant(c.variant, c.width_budget, c.input_resolution, c.dropout, c.drop_connect)
        except ValueError as exc:
            raise ConfigError(f"classifier: {exc}") from exc

    def training_config(self) -> TrainingConfig:
        t = self.training
        return _checked("training", TrainingConfig, t.base_lr, t.momentum, t.poly_power, t.total_steps,
                        t.batch_size, t.label_smoothing_eps, tuple(t.holdout_folders), self.seed,
                        t.validate_every, t.hflip)

    def aggregation_config(self) -> AggregationConfig:
        a = self.aggregation
        return _checked("aggregation", AggregationConfig, a.low_conf, a.high_conf, a.high_weight,
                        a.base_weight, a.fallback, a.confidence_mode)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _checked(section: str, cls, *args):
    try:
        return cls(*args)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


# ---------------------------------------------------------------------------
# merging


def _leaf_type(tp) -> type:
    """The scalar type behind Optional[...] / tuple[..., ...] annotations."""
    args = [a for a in typing.get_args(tp) if a is not type(None) and a is not Ellipsis]
    origin = typing.get_origin(tp)
    if origin in (tuple, list):
        return _leaf_type(args[0])
    if args:
        return _leaf_type(args[0])
    return tp


def _is_sequence(tp) -> bool:
    if typing.get_origin(tp) in (tuple, list):
        return True
    return any(_is_sequence(a) for a in typing.get_args(tp) if a is not type(None))


def _is_optional(tp) -> bool:
    return type(None) in typing.get_args(tp)


def parse_value(raw: Any, tp) -> Any:
    """Coerce a file or command-line value to the annotated type."""
    if raw is None or (isinstance(raw, str) and raw.lower() in ("none", "null") and _is_optional(tp)):
        if not _is_optional(tp):
            raise ConfigError(f"value required, got {raw!r}")
        return None
    leaf = _leaf_type(tp)
    if _is_sequence(tp):
        items = raw.split(",") if isinstance(raw, str) else list(raw)
        return tuple(parse_value(v.strip() if isinstance(v, str) else v, leaf) for v in items if v != "")
    try:
        if leaf is bool:
            if isinstance(raw, bool):
                return raw
            text = str(raw).lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if leaf is int and isinstance(raw, float) and not raw.is_integer():
            raise ValueError(raw)
        return leaf(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot read {raw!r} as {leaf.__name__}") from exc


def _hints(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def apply_overrides(cfg: RunConfig, values: dict[str, Any], source: str) -> RunConfig:
    """Apply a nested mapping (as loaded from a file) onto ``cfg`` in place."""
    top = _hints(RunConfig)
    for key, val in values.items():
        if key not in top:
            raise ConfigError(f"{source}: unknown key {key!r}")
        sub = getattr(cfg, key)
        if dataclasses.is_dataclass(sub):
            if not isinstance(val, dict):
                raise ConfigError(f"{source}: section {key!r} must be a mapping")
            hints = _hints(type(sub))
            for k, v in val.items():
                if k not in hints:
                    raise ConfigError(f"{source}: unknown key {key}.{k}")
                setattr(sub, k, parse_value(v, hints[k]))
        else:
            setattr(cfg, key, parse_value(val, top[key]))
    return cfg


def load_config_file(path: str | Path) -> dict[str, Any]:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def leaf_flags() -> list[tuple[str, str, Any]]:
    """(flag, dotted key, annotation) for every configurable leaf."""
    out = []
    for name, tp in _hints(RunConfig).items():
        if dataclasses.is_dataclass(tp):
            for k, sub_tp in _hints(tp).items():
                out.append((f"--{name}.{k}", f"{name}.{k}", sub_tp))
    return out


def resolve(config_path: Optional[str] = None, flag_values: Optional[dict[str, Any]] = None) -> RunConfig:
    """Defaults < config file (explicit path or $FACEFAKE_CONFIG) < flags.

    ``flag_values`` maps dotted keys ("training.base_lr", "seed") to raw
    values; None entries mean the flag was not given.
    """
    cfg = RunConfig()
    path = config_path or os.environ.get(ENV_CONFIG)
    if path:
        apply_overrides(cfg, load_config_file(path), str(path))
    nested: dict[str, Any] = {}
    for key, val in (flag_values or {}).items():
        if val is None:
            continue
        if "." in key:
            section, leaf = key.split(".", 1)
            nested.setdefault(section, {})[leaf] = val
        else:
            nested[key] = val
    apply_overrides(cfg, nested, "command line")
    return cfg
