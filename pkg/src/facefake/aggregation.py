"""Confidence-weighted fusion of frame-level fake probabilities."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from .core import FramePrediction, VideoPrediction


class ConfidenceMode(str, enum.Enum):
    # max(p, 1 - p): symmetric in REAL and FAKE
    FOLDED = "FOLDED"
    # the fake probability itself
    RAW = "RAW"


class Fallback(str, enum.Enum):
    MEAN_ALL = "MEAN_ALL"


@dataclass(frozen=True)
class AggregationConfig:
    low_conf: float = 0.6
    high_conf: float = 0.9
    high_weight: float = 2.0
    base_weight: float = 1.0
    fallback: Fallback = Fallback.MEAN_ALL
    confidence_mode: ConfidenceMode = ConfidenceMode.FOLDED

    def __post_init__(self):
        if not 0.5 <= self.low_conf <= self.high_conf <= 1.0:
            raise ValueError("need 0.5 <= low_conf <= high_conf <= 1")
        if self.high_weight < 1:
            raise ValueError("high_weight must be >= 1")
        object.__setattr__(self, "fallback", Fallback(self.fallback))
        object.__setattr__(self, "confidence_mode", ConfidenceMode(self.confidence_mode))


def confidence(p: float, mode: ConfidenceMode = ConfidenceMode.FOLDED) -> float:
    if mode is ConfidenceMode.RAW:
        return p
    return max(p, 1.0 - p)


def aggregate_video(preds: Sequence[FramePrediction],
                    cfg: AggregationConfig = AggregationConfig()) -> VideoPrediction:
    if not preds:
        raise ValueError("no frame predictions to aggregate")
    video_id = preds[0].video_id
    if any(p.video_id != video_id for p in preds):
        raise ValueError("frame predictions span more than one video")

    weighted, weights = [], []
    for fp in preds:
        c = confidence(fp.p_fake, cfg.confidence_mode)
        if c < cfg.low_conf:
            continue
        w = cfg.high_weight if c >= cfg.high_conf else cfg.base_weight
        weighted.append(w * fp.p_fake)
        weights.append(w)
    discarded = len(preds) - len(weights)

    if not weights:
        # fsum is exactly rounded, so the result does not depend on frame order
        p = math.fsum(fp.p_fake for fp in preds) / len(preds)
        return VideoPrediction(video_id, min(max(p, 0.0), 1.0), 0, discarded, fallback_used=True)
    p = math.fsum(weighted) / math.fsum(weights)
    return VideoPrediction(video_id, min(max(p, 0.0), 1.0), len(weights), discarded)


def aggregate_all(preds: Sequence[FramePrediction],
                  cfg: AggregationConfig = AggregationConfig()) -> dict[str, VideoPrediction]:
    by_video: dict[str, list[FramePrediction]] = {}
    for fp in preds:
        by_video.setdefault(fp.video_id, []).append(fp)
    return {vid: aggregate_video(fps, cfg) for vid, fps in sorted(by_video.items())}
