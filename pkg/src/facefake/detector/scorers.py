"""Deterministic stage scorers for bright-blob faces on darker backgrounds.

A window scores high when it frames exactly one bright connected blob with
a dark border ring around it; its regression offsets move the window onto
the blob's bounding box, optionally enlarged to keep context for the next
stage. Used by the test fixtures and by the synthetic-data pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .cascade import StageOutput, StageScorer

LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)

# keypoints as fractions of the blob's bounding box
LANDMARK_LAYOUT = np.array(
    [[0.32, 0.38], [0.68, 0.38], [0.50, 0.58], [0.36, 0.78], [0.64, 0.78]], dtype=np.float64)


def to_gray(patches: np.ndarray) -> np.ndarray:
    if patches.shape[-1] == 1:
        return patches[..., 0]
    return patches @ LUMA


@dataclass
class BlobScorer:
    """Score = 1 - (bright fraction of the window's border ring), 0 unless exactly one blob.

    ``context`` is the side-length ratio between the regression target and
    the blob box (1.0 regresses tightly onto the blob).
    """

    context: float = 1.0
    bright: float = 0.5
    landmarks: bool = False

    def __call__(self, patches: np.ndarray) -> StageOutput:
        n, s = patches.shape[0], patches.shape[1]
        mask = to_gray(patches) > self.bright
        ring_w = max(1, s // 12)
        ring = np.ones((s, s), dtype=bool)
        ring[ring_w:s - ring_w, ring_w:s - ring_w] = False
        ring_bright = mask[:, ring].mean(axis=1)

        # stack the patches with zero separators and label them in one pass;
        # raster-order labels make each patch's labels a contiguous range
        slab = np.zeros((n, s + 1, s + 1), dtype=bool)
        slab[:, :s, :s] = mask
        labels, _ = ndimage.label(slab.reshape(n * (s + 1), s + 1))
        labels = labels.reshape(n, -1)
        hi = labels.max(axis=1)
        lo = np.where(labels > 0, labels, np.iinfo(labels.dtype).max).min(axis=1)
        components = np.where(hi > 0, hi - lo + 1, 0)
        single = (components == 1) & (ring_bright < 1.0)

        rows_any = mask.any(axis=2)
        cols_any = mask.any(axis=1)
        by1 = rows_any.argmax(axis=1) / s
        by2 = (s - rows_any[:, ::-1].argmax(axis=1)) / s
        bx1 = cols_any.argmax(axis=1) / s
        bx2 = (s - cols_any[:, ::-1].argmax(axis=1)) / s
        cx, cy = (bx1 + bx2) / 2, (by1 + by2) / 2
        hw, hh = (bx2 - bx1) * self.context / 2, (by2 - by1) * self.context / 2

        p = np.where(single, 1.0 - ring_bright, 0.0)
        offsets = np.where(single[:, None],
                           np.stack([cx - hw, cy - hh, cx + hw - 1.0, cy + hh - 1.0], axis=1), 0.0)
        lms = None
        if self.landmarks:
            lms = np.stack([bx1[:, None] + LANDMARK_LAYOUT[None, :, 0] * (bx2 - bx1)[:, None],
                            by1[:, None] + LANDMARK_LAYOUT[None, :, 1] * (by2 - by1)[:, None]], axis=2)
            lms = np.where(single[:, None, None], lms, 0.0)
        return StageOutput(p, offsets, lms)


def blob_scorers(context: float = 2.0) -> tuple[StageScorer, StageScorer, StageScorer]:
    """Proposal and refinement stages keep ``context``; the output stage regresses tightly."""
    return (BlobScorer(context=context), BlobScorer(context=context),
            BlobScorer(context=1.0, landmarks=True))
