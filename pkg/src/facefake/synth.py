"""Procedural stand-in dataset: frame-directory videos of a face-like blob.

Real videos show a bright textured ellipse with eyes and a mouth drifting
over a dark background. Each fake copies a real video and re-renders the
inner face: blurred texture, a colour tint and a visible blending seam.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .preprocess import METADATA_NAME, write_video

LABELS_NAME = "labels.csv"


@dataclass(frozen=True)
class SynthSpec:
    n_videos: int = 60
    fake_ratio: float = 0.5
    n_frames: int = 36
    height: int = 120
    width: int = 160
    n_folders: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_videos < 1:
            raise ValueError("n_videos must be >= 1")
        if not 0 <= self.fake_ratio < 1:
            raise ValueError("fake_ratio must be in [0, 1)")


@dataclass(frozen=True)
class FaceTrack:
    cx: np.ndarray
    cy: np.ndarray
    ax: float
    ay: float


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    base = rng.uniform(25, 60, size=3).astype(np.float32)
    slope = rng.uniform(-0.15, 0.15, size=(2, 3)).astype(np.float32)
    bg = base + xx[..., None] * slope[0] + yy[..., None] * slope[1]
    blobs = cv2.GaussianBlur(rng.normal(0, 25, (h, w, 3)).astype(np.float32), (0, 0), 6)
    return np.clip(bg + blobs, 5, 95)


def _track(rng: np.random.Generator, spec: SynthSpec) -> FaceTrack:
    ax = rng.uniform(19, 24)
    ay = ax * rng.uniform(1.15, 1.3)
    t = np.arange(spec.n_frames)
    cx0 = rng.uniform(spec.width / 2 - 20, spec.width / 2 + 20)
    cy0 = rng.uniform(spec.height / 2 - 6, spec.height / 2 + 6)
    amp, freq, phase = rng.uniform(3, 10), rng.uniform(0.05, 0.15), rng.uniform(0, 2 * np.pi)
    return FaceTrack(cx0 + amp * np.sin(freq * t + phase), cy0 + 0.4 * amp * np.cos(freq * t + phase), ax, ay)


def _render_face(frame: np.ndarray, cx: float, cy: float, ax: float, ay: float,
                 skin: np.ndarray, texture: np.ndarray) -> np.ndarray:
    h, w = frame.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    r = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2
    alpha = np.clip((1.0 - r) * ax / 2, 0, 1)[..., None]
    shade = (1.0 - 0.12 * r)[..., None]
    tex = np.roll(texture, (int(round(cy)), int(round(cx))), axis=(0, 1))[:h, :w]
    face = skin * shade + tex
    out = frame * (1 - alpha) + face * alpha
    dark = np.array([40, 30, 30], dtype=np.float32)
    for ex in (-0.38, 0.38):
        cv2.ellipse(out, (int(round(cx + ex * ax)), int(round(cy - 0.22 * ay))),
                    (max(2, int(ax * 0.18)), max(1, int(ay * 0.08))), 0, 0, 360, dark.tolist(), -1)
    cv2.ellipse(out, (int(round(cx)), int(round(cy + 0.45 * ay))),
                (max(3, int(ax * 0.35)), max(1, int(ay * 0.06))), 0, 0, 360, (90, 40, 50), -1)
    return out


def _fake_face(frame: np.ndarray, cx: float, cy: float, ax: float, ay: float,
               sigma: float, tint: np.ndarray, seam: float) -> np.ndarray:
    """Swap the inner face for a blurred, tinted copy joined by a visible seam."""
    h, w = frame.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    r = np.sqrt(((xx - cx) / (0.84 * ax)) ** 2 + ((yy - (cy + 0.05 * ay)) / (0.86 * ay)) ** 2)
    inner = np.clip((1.0 - r) * 8, 0, 1)[..., None]
    swapped = cv2.GaussianBlur(frame, (0, 0), sigma) + tint
    out = frame * (1 - inner) + swapped * inner
    ring = np.exp(-((r - 1.0) / 0.06) ** 2)[..., None]
    return out + seam * ring


def generate(out_dir: str | Path, spec: SynthSpec = SynthSpec()) -> dict[str, dict]:
    """Write ``spec.n_videos`` frame-directory videos plus metadata.json and labels.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_fake = int(round(spec.n_videos * spec.fake_ratio))
    n_real = spec.n_videos - n_fake
    if n_fake and not n_real:
        raise ValueError("fakes need at least one real original")
    metadata: dict[str, dict] = {}
    real_frames: dict[str, tuple[list[np.ndarray], FaceTrack]] = {}

    for i in range(n_real):
        vid = f"real_{i:04d}"
        rng = np.random.default_rng([spec.seed, 0, i])
        bg = _background(rng, spec.height, spec.width)
        track = _track(rng, spec)
        skin = rng.uniform(185, 235, size=3).astype(np.float32)
        texture = cv2.GaussianBlur(rng.normal(0, 14, (2 * spec.height, 2 * spec.width, 3))
                                   .astype(np.float32), (0, 0), 0.7)
        frames = []
        for t in range(spec.n_frames):
            f = _render_face(bg.copy(), track.cx[t], track.cy[t], track.ax, track.ay, skin, texture)
            f = f + rng.normal(0, 2.0, f.shape).astype(np.float32)
            frames.append(np.clip(np.rint(f), 0, 255).astype(np.uint8))
        real_frames[vid] = (frames, track)
        write_video(out / vid, frames)
        metadata[vid] = {"label": "REAL", "original": None, "folder": i % spec.n_folders}

    reals = sorted(real_frames)
    for j in range(n_fake):
        vid = f"fake_{j:04d}"
        original = reals[j % n_real]
        rng = np.random.default_rng([spec.seed, 1, j])
        sigma = rng.uniform(1.6, 2.6)
        tint = rng.uniform(-24, 24, size=3).astype(np.float32)
        seam = float(rng.choice([-1, 1]) * rng.uniform(28, 40))
        src, track = real_frames[original]
        frames = []
        for t, f in enumerate(src):
            g = _fake_face(f.astype(np.float32), track.cx[t], track.cy[t], track.ax, track.ay,
                           sigma, tint, seam)
            frames.append(np.clip(np.rint(g), 0, 255).astype(np.uint8))
        write_video(out / vid, frames)
        metadata[vid] = {"label": "FAKE", "original": original, "folder": metadata[original]["folder"]}

    (out / METADATA_NAME).write_text(json.dumps(metadata, indent=1, sort_keys=True) + "\n")
    with (out / LABELS_NAME).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label"])
        for vid in sorted(metadata):
            writer.writerow([vid, 1 if metadata[vid]["label"] == "FAKE" else 0])
    return metadata
