"""Shared domain types, the image buffer and the dataset manifest schema."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

MANIFEST_VERSION = 1
LANDMARK_NAMES = ("left_eye", "right_eye", "nose", "mouth_left", "mouth_right")


class FacefakeError(Exception):
    """Base class for all package errors."""


class DataError(FacefakeError):
    """Input data is missing, malformed or inconsistent."""


class ConfigError(FacefakeError):
    """A configuration value is invalid."""


class NumericError(FacefakeError):
    """A computation produced a non-finite value."""


class Label(str, enum.Enum):
    REAL = "REAL"
    FAKE = "FAKE"
    UNKNOWN = "UNKNOWN"

    @property
    def target(self) -> int:
        if self is Label.UNKNOWN:
            raise ValueError("UNKNOWN has no training target")
        return 1 if self is Label.FAKE else 0


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """An H x W x C image held as a read-only numpy array.

    Intensities are in [0, 255] when ``normalized`` is False and in [0, 1]
    otherwise. Single-channel images are stored with a trailing axis of 1.
    """

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected HxWx1 or HxWx3 data, got shape {arr.shape}")
        if arr.shape[0] <= 0 or arr.shape[1] <= 0:
            raise ValueError("image must be non-empty")
        hi = 1.0 if self.normalized else 255.0
        if arr.size and (arr.min() < 0 or arr.max() > hi):
            raise ValueError(f"intensities outside [0, {hi:g}]")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def normalize(self) -> "ImageBuffer":
        if self.normalized:
            return self
        return ImageBuffer(self.data.astype(np.float32) / 255.0, normalized=True)

    def denormalize(self) -> "ImageBuffer":
        """Back to 8-bit intensities; rounding bounds the error at half a level."""
        if not self.normalized:
            return self
        return ImageBuffer(np.clip(np.rint(self.data * 255.0), 0, 255).astype(np.uint8))

    def as_float01(self) -> np.ndarray:
        """float32 copy scaled to [0, 1], shape (H, W, C)."""
        if self.normalized:
            return self.data.astype(np.float32)
        return self.data.astype(np.float32) / 255.0

    def to_uint8(self) -> np.ndarray:
        return self.denormalize().data if self.normalized else (
            self.data if self.data.dtype == np.uint8
            else np.clip(np.rint(self.data), 0, 255).astype(np.uint8))

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "ImageBuffer":
        return cls(np.asarray(arr, dtype=np.uint8))


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2})")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Landmarks:
    """Five facial keypoints in frame pixel coordinates."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(pts) != 5:
            raise ValueError(f"expected 5 landmarks, got {len(pts)}")
        object.__setattr__(self, "points", pts)

    def named(self) -> dict[str, tuple[float, float]]:
        return dict(zip(LANDMARK_NAMES, self.points))

    def within(self, height: int, width: int) -> bool:
        return all(0 <= x < width and 0 <= y < height for x, y in self.points)


@dataclass(frozen=True)
class FaceCrop:
    image: ImageBuffer
    video_id: str
    frame_index: int
    source_box: BoundingBox
    margin_fraction: float
    label: Label = Label.UNKNOWN
    # integer crop rectangle in frame coordinates
    region: tuple[int, int, int, int] = (0, 0, 0, 0)

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        if self.margin_fraction < 0:
            raise ValueError("margin_fraction must be >= 0")


@dataclass(frozen=True)
class FramePrediction:
    video_id: str
    frame_index: int
    p_fake: float

    def __post_init__(self):
        if not 0.0 <= self.p_fake <= 1.0:
            raise ValueError(f"p_fake {self.p_fake} outside [0, 1]")


@dataclass(frozen=True)
class VideoPrediction:
    video_id: str
    p_fake: float
    frames_used: int
    frames_discarded: int
    fallback_used: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p_fake <= 1.0:
            raise ValueError(f"p_fake {self.p_fake} outside [0, 1]")
        if self.frames_used < 0 or self.frames_discarded < 0:
            raise ValueError("frame counts must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "p_fake": self.p_fake,
            "frames_used": self.frames_used,
            "frames_discarded": self.frames_discarded,
            "fallback_used": self.fallback_used,
        }


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestEntry:
    crop_path: str
    video_id: str
    frame_index: int
    label: Label
    original_video_id: Optional[str] = None
    folder: Optional[int] = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "crop_path": self.crop_path,
            "video_id": self.video_id,
            "frame_index": self.frame_index,
            "label": self.label.value,
            "original_video_id": self.original_video_id,
        }
        if self.folder is not None:
            d["folder"] = self.folder
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ManifestEntry":
        label = Label(d["label"])
        if label is Label.UNKNOWN:
            raise DataError("manifest labels must be REAL or FAKE")
        return cls(
            crop_path=str(d["crop_path"]),
            video_id=str(d["video_id"]),
            frame_index=int(d["frame_index"]),
            label=label,
            original_video_id=d.get("original_video_id"),
            folder=None if d.get("folder") is None else int(d["folder"]),
        )


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def video_ids(self) -> list[str]:
        return sorted({e.video_id for e in self.entries})

    def filter(self, keep) -> "DatasetManifest":
        return DatasetManifest(tuple(e for e in self.entries if keep(e)))

    def to_json(self) -> dict[str, Any]:
        return {"version": MANIFEST_VERSION, "entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "DatasetManifest":
        if not isinstance(doc, dict) or doc.get("version") != MANIFEST_VERSION:
            raise DataError("unsupported manifest document (version must be 1)")
        return cls(tuple(ManifestEntry.from_dict(e) for e in doc.get("entries", [])))


@dataclass(frozen=True)
class Violation:
    rule: str
    detail: str
    index: Optional[int] = None


def validate_manifest(manifest: DatasetManifest) -> list[Violation]:
    """Check manifest invariants; an empty list means the manifest is valid."""
    out: list[Violation] = []
    seen: dict[str, int] = {}
    for i, e in enumerate(manifest.entries):
        if e.crop_path in seen:
            out.append(Violation("unique_crop_path",
                                 f"{e.crop_path!r} repeats entry {seen[e.crop_path]}", i))
        else:
            seen[e.crop_path] = i
        if e.label not in (Label.REAL, Label.FAKE):
            out.append(Violation("label", f"label {e.label} not allowed", i))
        if e.frame_index < 0:
            out.append(Violation("frame_index", "negative frame index", i))

    real_ids = {e.video_id for e in manifest.entries if e.label is Label.REAL}
    has_pairing = any(e.original_video_id for e in manifest.entries if e.label is Label.FAKE)
    if has_pairing:
        for i, e in enumerate(manifest.entries):
            if e.label is Label.FAKE and e.original_video_id and e.original_video_id not in real_ids:
                out.append(Violation("original_reference",
                                     f"{e.video_id} references missing original {e.original_video_id!r}", i))
    return out


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a manifest; OSError propagates unchanged so callers can tell I/O from validation failures."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    return DatasetManifest.from_json(doc)


def entries_by_video(entries: Iterable[ManifestEntry]) -> dict[str, list[ManifestEntry]]:
    out: dict[str, list[ManifestEntry]] = {}
    for e in entries:
        out.setdefault(e.video_id, []).append(e)
    return out
