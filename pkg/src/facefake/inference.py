"""Turning face crops into fake probabilities with a trained classifier."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import torch

from .classifier.model import EfficientNetClassifier
from .core import DatasetManifest, FramePrediction
from .preprocess import read_png

# ImageNet channel statistics, the usual input normalisation for this family
MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def prepare_crop(rgb: np.ndarray, resolution: int) -> np.ndarray:
    """uint8 RGB crop -> normalised float32 (resolution, resolution, 3)."""
    img = cv2.resize(rgb, (resolution, resolution), interpolation=cv2.INTER_AREA)
    return (img.astype(np.float32) / 255.0 - MEAN) / STD


def to_tensor(batch: np.ndarray) -> torch.Tensor:
    """(N, H, W, 3) -> (N, 3, H, W)."""
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2)))


def load_crop_array(root: str | Path, manifest: DatasetManifest, resolution: int) -> np.ndarray:
    root = Path(root)
    return np.stack([prepare_crop(read_png(root / e.crop_path), resolution) for e in manifest.entries]) \
        if len(manifest) else np.zeros((0, resolution, resolution, 3), np.float32)


@torch.no_grad()
def predict_array(model: EfficientNetClassifier, crops: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Evaluation-mode fake probabilities for prepared crops, shape (N,)."""
    was_training = model.training
    model.eval()
    out = []
    for i in range(0, len(crops), batch_size):
        out.append(model(to_tensor(crops[i:i + batch_size])).reshape(-1).double().numpy())
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)


def frame_predictions(video_ids: Sequence[str], frame_indices: Sequence[int],
                      probs: np.ndarray) -> list[FramePrediction]:
    return [FramePrediction(v, int(f), float(p)) for v, f, p in zip(video_ids, frame_indices, probs)]
