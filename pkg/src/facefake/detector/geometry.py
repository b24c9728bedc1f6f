"""Box geometry for the cascade: pyramid scales, IoU, NMS, regression, padding."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np

from ..core import BoundingBox, FacefakeError, ImageBuffer


class EmptyPyramid(FacefakeError):
    """The frame is too small to yield a single pyramid level."""


class DegenerateBox(FacefakeError):
    """Box regression produced a box with non-positive extent."""


class NMSMode(str, enum.Enum):
    UNION = "UNION"
    MIN = "MIN"


@dataclass(frozen=True)
class PyramidSpec:
    min_face_size: float = 20
    scale_factor: float = 0.709
    stage1_input: int = 12

    def __post_init__(self):
        if not 0 < self.scale_factor < 1:
            raise ValueError("scale_factor must be in (0, 1)")
        if self.min_face_size < self.stage1_input:
            raise ValueError("min_face_size must be >= stage1_input")


def build_pyramid(frame_size: tuple[int, int], spec: PyramidSpec = PyramidSpec()) -> list[float]:
    h, w = frame_size
    min_side = min(h, w)
    scales = []
    scale = spec.stage1_input / spec.min_face_size
    while min_side * scale >= spec.stage1_input:
        scales.append(scale)
        scale *= spec.scale_factor
    if not scales:
        raise EmptyPyramid(f"frame {h}x{w} too small for stage input {spec.stage1_input}")
    return scales


def iou(a: BoundingBox, b: BoundingBox, mode: NMSMode | str = NMSMode.UNION) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    if NMSMode(mode) is NMSMode.MIN:
        return inter / min(a.area, b.area)
    return inter / (a.area + b.area - inter)


def iou_one_to_many(box: np.ndarray, others: np.ndarray, mode: NMSMode | str) -> np.ndarray:
    """IoU of one (x1, y1, x2, y2) row against an (N, >=4) array."""
    iw = np.minimum(box[2], others[:, 2]) - np.maximum(box[0], others[:, 0])
    ih = np.minimum(box[3], others[:, 3]) - np.maximum(box[1], others[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area = (box[2] - box[0]) * (box[3] - box[1])
    areas = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    if NMSMode(mode) is NMSMode.MIN:
        return inter / np.minimum(area, areas)
    return inter / (area + areas - inter)


def nms_indices(boxes: np.ndarray, scores: np.ndarray, threshold: float,
                mode: NMSMode | str = NMSMode.UNION) -> np.ndarray:
    """Greedy suppression; returns kept indices in descending-score order.

    Ties in score keep their input order. A candidate survives iff its IoU
    with every already-kept box is <= threshold.
    """
    if len(boxes) == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-np.asarray(scores), kind="stable")
    keep: list[int] = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        if not rest.size:
            break
        overlap = iou_one_to_many(boxes[i], boxes[rest], mode)
        order = rest[overlap <= threshold]
    return np.asarray(keep, dtype=np.int64)


def nms(boxes: Sequence[BoundingBox], iou_threshold: float,
        mode: NMSMode | str = NMSMode.UNION) -> list[BoundingBox]:
    if not boxes:
        return []
    arr = np.array([b.as_list() for b in boxes], dtype=np.float64)
    scores = np.array([b.confidence for b in boxes], dtype=np.float64)
    return [boxes[i] for i in nms_indices(arr, scores, iou_threshold, mode)]


def apply_box_regression(box: BoundingBox, offsets: Sequence[float]) -> BoundingBox:
    dx1, dy1, dx2, dy2 = offsets
    w, h = box.width, box.height
    x1, y1 = box.x1 + dx1 * w, box.y1 + dy1 * h
    x2, y2 = box.x2 + dx2 * w, box.y2 + dy2 * h
    if not (x2 > x1 and y2 > y1):
        raise DegenerateBox(f"regressed box ({x1}, {y1}, {x2}, {y2}) has non-positive extent")
    return BoundingBox(x1, y1, x2, y2, box.confidence)


def regress_array(boxes: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Vectorised regression on (N, 4) boxes; degenerate rows come back with x2 <= x1."""
    w = (boxes[:, 2] - boxes[:, 0])[:, None]
    h = (boxes[:, 3] - boxes[:, 1])[:, None]
    scale = np.concatenate([w, h, w, h], axis=1)
    return boxes[:, :4] + offsets * scale


def square_pad(box: BoundingBox) -> BoundingBox:
    x1, y1, x2, y2 = square_pad_array(np.array([box.as_list()], dtype=np.float64))[0]
    return BoundingBox(x1, y1, x2, y2, box.confidence)


def square_pad_array(boxes: np.ndarray) -> np.ndarray:
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    side = np.maximum(w, h)
    cx = boxes[:, 0] + w / 2
    cy = boxes[:, 1] + h / 2
    out = np.stack([cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2], axis=1)
    # keep exact coordinates on the axis that is already the long side
    wide = w >= h
    out[wide, 0], out[wide, 2] = boxes[wide, 0], boxes[wide, 2]
    tall = h >= w
    out[tall, 1], out[tall, 3] = boxes[tall, 1], boxes[tall, 3]
    return out


def clip_array(boxes: np.ndarray, height: int, width: int) -> np.ndarray:
    out = boxes.copy()
    out[:, [0, 2]] = np.clip(out[:, [0, 2]], 0, width)
    out[:, [1, 3]] = np.clip(out[:, [1, 3]], 0, height)
    return out


def dynamic_resize(frame: ImageBuffer, cap: int = 640) -> tuple[ImageBuffer, float]:
    """Downscale so the longer side equals ``cap``; frames already within the cap pass through."""
    h, w = frame.height, frame.width
    if max(h, w) <= cap:
        return frame, 1.0
    scale = cap / max(h, w)
    new_w = cap if w >= h else int(round(w * scale))
    new_h = cap if h >= w else int(round(h * scale))
    src = frame.data.astype(np.float32)
    out = cv2.resize(src, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    if out.ndim == 2:
        out = out[:, :, None]
    hi = 1.0 if frame.normalized else 255.0
    out = np.clip(out, 0, hi)
    if frame.data.dtype == np.uint8:
        out = np.rint(out).astype(np.uint8)
    return ImageBuffer(out, normalized=frame.normalized), scale
