"""Three-stage cascaded face detector with pluggable stage scorers.

A stage scorer is any callable taking a batch of square patches, float32 in
[0, 1] with shape (N, S, S, 3), and returning a :class:`StageOutput`. Offsets
are fractions of the scored window's width/height; landmarks (stage 3 only)
are normalised to the window, each coordinate in [0, 1].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Sequence

import cv2
import numpy as np

from ..core import BoundingBox, DataError, ImageBuffer, Landmarks
from .geometry import (
    NMSMode,
    PyramidSpec,
    build_pyramid,
    clip_array,
    dynamic_resize,
    nms_indices,
    regress_array,
    square_pad_array,
)

STAGE_SIZES = (12, 24, 48)


@dataclass
class StageOutput:
    p_face: np.ndarray
    offsets: np.ndarray
    landmarks: Optional[np.ndarray] = None


class StageScorer(Protocol):
    def __call__(self, patches: np.ndarray) -> StageOutput: ...


def per_patch(fn: Callable[[ImageBuffer], dict[str, Any]]) -> StageScorer:
    """Adapt a single-patch scorer returning ``{"p_face", "box_offsets", "landmarks_normalized"}``."""

    def scorer(patches: np.ndarray) -> StageOutput:
        results = [fn(ImageBuffer(np.clip(p, 0, 1), normalized=True)) for p in patches]
        p = np.array([r["p_face"] for r in results], dtype=np.float64).reshape(-1)
        off = np.array([r.get("box_offsets", (0, 0, 0, 0)) for r in results],
                       dtype=np.float64).reshape(-1, 4)
        lms = None
        if results and results[0].get("landmarks_normalized") is not None:
            lms = np.array([r["landmarks_normalized"] for r in results], dtype=np.float64)
        return StageOutput(p, off, lms)

    return scorer


@dataclass(frozen=True)
class CascadeConfig:
    stage_thresholds: tuple[float, float, float] = (0.6, 0.7, 0.8)
    nms_thresholds: tuple[float, float, float] = (0.7, 0.7, 0.7)
    nms_modes: tuple[NMSMode, NMSMode, NMSMode] = (NMSMode.UNION, NMSMode.UNION, NMSMode.MIN)
    pyramid: PyramidSpec = field(default_factory=PyramidSpec)
    detector_input_cap: int = 640
    stride: int = 2

    def __post_init__(self):
        if any(not 0 <= t <= 1 for t in self.stage_thresholds):
            raise ValueError("stage thresholds must lie in [0, 1]")
        if any(not 0 < t <= 1 for t in self.nms_thresholds):
            raise ValueError("NMS thresholds must lie in (0, 1]")
        object.__setattr__(self, "nms_modes", tuple(NMSMode(m) for m in self.nms_modes))


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    landmarks: Landmarks

    def to_json(self) -> dict[str, Any]:
        return {
            "box": self.box.as_list(),
            "confidence": self.box.confidence,
            "landmarks": [list(p) for p in self.landmarks.points],
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "Detection":
        x1, y1, x2, y2 = d["box"]
        return cls(BoundingBox(x1, y1, x2, y2, d["confidence"]),
                   Landmarks(tuple(tuple(p) for p in d["landmarks"])))


@dataclass
class CascadeTrace:
    """Candidate counts after each stage (stage 1 counts post cross-scale NMS)."""

    counts: list[int] = field(default_factory=list)


def crop_patches(image: np.ndarray, boxes: np.ndarray, size: int) -> np.ndarray:
    """Sample each box of ``image`` (H, W, C float) onto a size x size grid, zero outside the frame."""
    out = np.zeros((len(boxes), size, size, image.shape[2]), dtype=np.float32)
    for i, (x1, y1, x2, y2) in enumerate(boxes[:, :4]):
        ax = (x2 - x1) / size
        ay = (y2 - y1) / size
        # continuous coords put pixel i over [i, i+1]; cv2 puts its centre at i
        m = np.array([[ax, 0, x1 + 0.5 * ax - 0.5], [0, ay, y1 + 0.5 * ay - 0.5]], dtype=np.float64)
        patch = cv2.warpAffine(image, m, (size, size),
                               flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                               borderMode=cv2.BORDER_CONSTANT, borderValue=0)
        out[i] = patch.reshape(size, size, -1)
    return out


def _stage1(image: np.ndarray, scorer: StageScorer, cfg: CascadeConfig) -> np.ndarray:
    h, w = image.shape[:2]
    size = cfg.pyramid.stage1_input
    thr = cfg.stage_thresholds[0]
    found = []
    for scale in build_pyramid((h, w), cfg.pyramid):
        hs, ws = int(math.ceil(h * scale)), int(math.ceil(w * scale))
        level = cv2.resize(image, (ws, hs), interpolation=cv2.INTER_LINEAR).reshape(hs, ws, -1)
        view = np.lib.stride_tricks.sliding_window_view(level, (size, size), axis=(0, 1))
        view = view[::cfg.stride, ::cfg.stride]
        rows, cols = view.shape[:2]
        if rows == 0 or cols == 0:
            continue
        patches = np.ascontiguousarray(view.transpose(0, 1, 3, 4, 2)).reshape(-1, size, size, level.shape[2])
        out = scorer(patches)
        p = np.clip(np.asarray(out.p_face, dtype=np.float64).reshape(-1), 0, 1)
        hit = np.nonzero(p >= thr)[0]
        if not hit.size:
            continue
        r, c = np.divmod(hit, cols)
        sx, sy = ws / w, hs / h
        y0, x0 = r * cfg.stride, c * cfg.stride
        boxes = np.stack([x0 / sx, y0 / sy, (x0 + size) / sx, (y0 + size) / sy], axis=1)
        boxes = regress_array(boxes, np.asarray(out.offsets, dtype=np.float64)[hit])
        scores = p[hit]
        ok = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
        boxes, scores = boxes[ok], scores[ok]
        keep = nms_indices(boxes, scores, cfg.nms_thresholds[0], cfg.nms_modes[0])
        found.append(np.column_stack([boxes[keep], scores[keep]]))
    if not found:
        return np.zeros((0, 5))
    cand = np.concatenate(found)
    keep = nms_indices(cand[:, :4], cand[:, 4], cfg.nms_thresholds[0], cfg.nms_modes[0])
    return cand[keep]


def _refine(image: np.ndarray, cand: np.ndarray, scorer: StageScorer, stage: int,
            cfg: CascadeConfig) -> tuple[np.ndarray, Optional[np.ndarray]]:
    if not len(cand):
        return cand, None
    padded = square_pad_array(cand[:, :4])
    out = scorer(crop_patches(image, padded, STAGE_SIZES[stage]))
    p = np.clip(np.asarray(out.p_face, dtype=np.float64).reshape(-1), 0, 1)
    hit = p >= cfg.stage_thresholds[stage]
    boxes = regress_array(padded[hit], np.asarray(out.offsets, dtype=np.float64)[hit])
    scores = p[hit]
    lms = None
    if stage == 2:
        if out.landmarks is None:
            raise ValueError("stage 3 scorer must return landmarks")
        norm = np.asarray(out.landmarks, dtype=np.float64).reshape(-1, 5, 2)[hit]
        base = padded[hit]
        bw = (base[:, 2] - base[:, 0])[:, None]
        bh = (base[:, 3] - base[:, 1])[:, None]
        lms = np.stack([base[:, 0:1] + norm[:, :, 0] * bw, base[:, 1:2] + norm[:, :, 1] * bh], axis=2)
    ok = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    boxes, scores = boxes[ok], scores[ok]
    keep = nms_indices(boxes, scores, cfg.nms_thresholds[stage], cfg.nms_modes[stage])
    result = np.column_stack([boxes[keep], scores[keep]]) if len(keep) else np.zeros((0, 5))
    if lms is not None:
        lms = lms[ok][keep]
    return result, lms


def run_cascade(image: np.ndarray, scorers: Sequence[StageScorer], cfg: CascadeConfig,
                trace: Optional[CascadeTrace] = None) -> tuple[np.ndarray, np.ndarray]:
    """Cascade on a float [0, 1] (H, W, 3) array, no resizing. Returns (N, 5) boxes and (N, 5, 2) landmarks."""
    s1, s2, s3 = scorers
    cand = _stage1(image, s1, cfg)
    counts = [len(cand)]
    cand, _ = _refine(image, cand, s2, 1, cfg)
    counts.append(len(cand))
    cand, lms = _refine(image, cand, s3, 2, cfg)
    counts.append(len(cand))
    if trace is not None:
        trace.counts = counts
    if lms is None:
        lms = np.zeros((0, 5, 2))
    return cand, lms


def detect_faces(frame: ImageBuffer, scorers: Sequence[StageScorer],
                 config: CascadeConfig = CascadeConfig(),
                 trace: Optional[CascadeTrace] = None) -> list[Detection]:
    small, scale = dynamic_resize(frame, config.detector_input_cap)
    image = small.as_float01()
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    cand, lms = run_cascade(image, scorers, config, trace)
    h, w = frame.height, frame.width
    cand = cand.copy()
    cand[:, :4] /= scale
    lms = lms / scale
    boxes = clip_array(cand[:, :4], h, w)
    out = []
    for box, conf, pts in zip(boxes, cand[:, 4], lms):
        if not (box[2] > box[0] and box[3] > box[1]):
            continue
        pts = pts.copy()
        pts[:, 0] = np.clip(pts[:, 0], 0, np.nextafter(w, 0))
        pts[:, 1] = np.clip(pts[:, 1], 0, np.nextafter(h, 0))
        out.append(Detection(BoundingBox(*map(float, box), float(conf)),
                             Landmarks(tuple(map(tuple, pts)))))
    return out


# ---------------------------------------------------------------------------
# per-video detection files


def detections_to_json(video_id: str, frames: dict[int, list[Detection]]) -> dict[str, Any]:
    return {
        "video_id": video_id,
        "frames": {str(k): [d.to_json() for d in frames[k]] for k in sorted(frames)},
    }


def detections_from_json(doc: dict[str, Any]) -> tuple[str, dict[int, list[Detection]]]:
    try:
        frames = {int(k): [Detection.from_json(d) for d in v] for k, v in doc["frames"].items()}
        return str(doc["video_id"]), frames
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed detection document: {exc}") from exc


def save_detections(path: str | Path, video_id: str, frames: dict[int, list[Detection]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(detections_to_json(video_id, frames), indent=1) + "\n")


def load_detections(path: str | Path) -> tuple[str, dict[int, list[Detection]]]:
    return detections_from_json(json.loads(Path(path).read_text()))
