"""Compound scaling and the MBConv stage plan for the EfficientNet family.

Everything here is plain Python so the plan can be inspected (and its
parameter count walked analytically) without building a network.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

BASE_RESOLUTION = 224
STEM_CHANNELS = 32
HEAD_CHANNELS = 1280
SE_RATIO = 0.25

# (expansion, channels_out, repeats, stride, kernel) of the B0 baseline
BASE_STAGES = (
    (1, 16, 1, 1, 3),
    (6, 24, 2, 2, 3),
    (6, 40, 2, 2, 5),
    (6, 80, 3, 2, 3),
    (6, 112, 3, 1, 5),
    (6, 192, 4, 2, 5),
    (6, 320, 1, 1, 3),
)

# name: (width_mult, depth_mult, resolution, dropout)
VARIANTS = {
    "B0": (1.0, 1.0, 224, 0.2),
    "B1": (1.0, 1.1, 240, 0.2),
    "B2": (1.1, 1.2, 260, 0.3),
    "B3": (1.2, 1.4, 300, 0.3),
    "B4": (1.4, 1.8, 380, 0.4),
    "B5": (1.6, 2.2, 456, 0.4),
    "B6": (1.8, 2.6, 528, 0.5),
    "B7": (2.0, 3.1, 600, 0.5),
}


class ScalingConstraintWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ScalingConfig:
    alpha: float = 1.2
    beta: float = 1.1
    gamma: float = 1.15
    phi: float = 0.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) <= 1:
            raise ValueError("alpha, beta and gamma must exceed 1")
        if self.phi < 0:
            raise ValueError("phi must be >= 0")
        flops = self.flops_factor
        if not 1.9 <= flops <= 2.1:
            warnings.warn(f"alpha * beta^2 * gamma^2 = {flops:.4f} is outside [1.9, 2.1]",
                          ScalingConstraintWarning, stacklevel=3)

    @property
    def flops_factor(self) -> float:
        return self.alpha * self.beta ** 2 * self.gamma ** 2


def compound_multipliers(cfg: ScalingConfig) -> dict[str, float]:
    return {
        "depth_mult": cfg.alpha ** cfg.phi,
        "width_mult": cfg.beta ** cfg.phi,
        "resolution_mult": cfg.gamma ** cfg.phi,
    }


def round_width(channels: int, width_mult: float, divisor: int = 8) -> int:
    v = channels * width_mult
    out = max(divisor, int(v + divisor / 2) // divisor * divisor)
    if out < 0.9 * v:
        out += divisor
    return out


def round_depth(repeats: int, depth_mult: float) -> int:
    return int(math.ceil(repeats * depth_mult))


@dataclass(frozen=True)
class StageSpec:
    expansion: int
    channels_out: int
    repeats: int
    stride: int
    kernel: int
    se_ratio: float = SE_RATIO

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        if self.kernel not in (3, 5):
            raise ValueError("kernel must be 3 or 5")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass(frozen=True)
class BackboneConfig:
    stages: tuple[StageSpec, ...]
    stem_channels: int
    head_channels: int
    input_resolution: int
    dropout: float = 0.2
    width_mult: float = 1.0
    depth_mult: float = 1.0
    drop_connect: float = 0.2
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(
            s if isinstance(s, StageSpec) else StageSpec(**s) for s in self.stages))
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.input_resolution < 1:
            raise ValueError("input_resolution must be positive")

    @property
    def num_blocks(self) -> int:
        return sum(s.repeats for s in self.stages)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BackboneConfig":
        d = dict(d)
        d["stages"] = tuple(StageSpec(**s) for s in d["stages"])
        return cls(**d)


def build_variant(name: str | ScalingConfig = "B5", width_budget: float = 1.0,
                  resolution: Optional[int] = None, dropout: Optional[float] = None,
                  drop_connect: float = 0.2) -> BackboneConfig:
    """Scaled stage plan for a named variant or a custom compound-scaling config.

    ``width_budget`` < 1 shrinks every channel count after the variant's own
    rounding (topology unchanged); ``resolution`` overrides the input size.
    """
    if not 0 < width_budget <= 1:
        raise ValueError("width_budget must be in (0, 1]")
    if isinstance(name, ScalingConfig):
        m = compound_multipliers(name)
        width, depth = m["width_mult"], m["depth_mult"]
        res = int(round(BASE_RESOLUTION * m["resolution_mult"]))
        drop = 0.2
        label = f"phi={name.phi:g}"
    else:
        key = str(name).upper()
        if key not in VARIANTS:
            raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}")
        width, depth, res, drop = VARIANTS[key]
        label = key

    def channels(c: int) -> int:
        c = round_width(c, width)
        return c if width_budget == 1.0 else round_width(c, width_budget)

    stages = tuple(
        StageSpec(e, channels(c), round_depth(r, depth), s, k)
        for e, c, r, s, k in BASE_STAGES
    )
    return BackboneConfig(
        stages=stages,
        stem_channels=channels(STEM_CHANNELS),
        head_channels=channels(HEAD_CHANNELS),
        input_resolution=resolution if resolution is not None else res,
        dropout=drop if dropout is None else dropout,
        width_mult=width,
        depth_mult=depth,
        drop_connect=drop_connect,
        name=label,
    )


# ---------------------------------------------------------------------------
# analytic plan walker


@dataclass(frozen=True)
class BlockPlan:
    in_channels: int
    out_channels: int
    expanded: int
    squeezed: int
    kernel: int
    stride: int
    residual: bool


@dataclass
class LayerReport:
    name: str
    params: int
    output_shape: tuple[int, int, int]


@dataclass
class PlanReport:
    layers: list[LayerReport] = field(default_factory=list)
    blocks: list[BlockPlan] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(layer.params for layer in self.layers)


def _conv_out(size: int, stride: int) -> int:
    return -(-size // stride)


def block_plans(cfg: BackboneConfig) -> list[BlockPlan]:
    out = []
    c_in = cfg.stem_channels
    for st in cfg.stages:
        for i in range(st.repeats):
            stride = st.stride if i == 0 else 1
            expanded = c_in * st.expansion
            out.append(BlockPlan(
                in_channels=c_in,
                out_channels=st.channels_out,
                expanded=expanded,
                squeezed=max(1, int(c_in * st.se_ratio)),
                kernel=st.kernel,
                stride=stride,
                residual=stride == 1 and c_in == st.channels_out,
            ))
            c_in = st.channels_out
    return out


def walk_plan(cfg: BackboneConfig, in_channels: int = 3) -> PlanReport:
    """Parameter counts and output shapes per top-level unit (stem, blocks.i, head, classifier)."""

    def bn(c):
        return 2 * c

    rep = PlanReport(blocks=block_plans(cfg))
    size = _conv_out(cfg.input_resolution, 2)
    rep.layers.append(LayerReport("stem", 9 * in_channels * cfg.stem_channels + bn(cfg.stem_channels),
                                  (cfg.stem_channels, size, size)))
    for i, b in enumerate(rep.blocks):
        p = 0
        if b.expanded != b.in_channels:
            p += b.in_channels * b.expanded + bn(b.expanded)
        p += b.kernel * b.kernel * b.expanded + bn(b.expanded)
        p += (b.expanded * b.squeezed + b.squeezed) + (b.squeezed * b.expanded + b.expanded)
        p += b.expanded * b.out_channels + bn(b.out_channels)
        size = _conv_out(size, b.stride)
        rep.layers.append(LayerReport(f"blocks.{i}", p, (b.out_channels, size, size)))
    c_last = rep.blocks[-1].out_channels
    rep.layers.append(LayerReport("head", c_last * cfg.head_channels + bn(cfg.head_channels),
                                  (cfg.head_channels, size, size)))
    rep.layers.append(LayerReport("classifier", cfg.head_channels + 1, (1, 1, 1)))
    return rep
