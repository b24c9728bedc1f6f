"""Frame sampling, margin crops, SSIM difference masks and dataset materialisation."""

from __future__ import annotations

import enum
import json
import logging
import math
import shutil
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import (
    BoundingBox,
    DataError,
    DatasetManifest,
    FaceCrop,
    ImageBuffer,
    Label,
    ManifestEntry,
    save_manifest,
    validate_manifest,
)
from .detector.cascade import load_detections

log = logging.getLogger(__name__)

FRAME_NAME = "{:06d}.png"
META_NAME = "meta.json"
METADATA_NAME = "metadata.json"


class SamplingStrategy(str, enum.Enum):
    UNIFORM = "UNIFORM"


@dataclass(frozen=True)
class SamplingPlan:
    frames_per_video: int = 32
    strategy: SamplingStrategy = SamplingStrategy.UNIFORM

    def __post_init__(self):
        if self.frames_per_video < 1:
            raise ValueError("frames_per_video must be >= 1")


@dataclass(frozen=True)
class SSIMParams:
    window: int = 7
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("SSIM window must be odd and >= 3")


def sample_frames(frame_count: int, plan: SamplingPlan = SamplingPlan()) -> list[int]:
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    n = min(plan.frames_per_video, frame_count)
    if n == 1:
        return [0]
    step = (frame_count - 1) / (n - 1)
    # round half away from zero, not numpy's banker's rounding
    return sorted({int(math.floor(i * step + 0.5)) for i in range(n)})


def margin_region(box: BoundingBox, height: int, width: int,
                  margin_fraction: float = 0.30) -> tuple[int, int, int, int]:
    """Integer (x1, y1, x2, y2) of ``box`` grown by ``margin_fraction`` of its size, clipped to the frame."""
    if box.x2 <= 0 or box.y2 <= 0 or box.x1 >= width or box.y1 >= height:
        raise DataError(f"box {box.as_list()} lies outside the {width}x{height} frame")
    mx = box.width * margin_fraction / 2
    my = box.height * margin_fraction / 2
    x1 = int(math.floor(max(0.0, box.x1 - mx)))
    y1 = int(math.floor(max(0.0, box.y1 - my)))
    x2 = int(math.ceil(min(float(width), box.x2 + mx)))
    y2 = int(math.ceil(min(float(height), box.y2 + my)))
    return x1, y1, x2, y2


def crop_with_margin(frame: ImageBuffer, box: BoundingBox, margin_fraction: float = 0.30,
                     video_id: str = "", frame_index: int = 0,
                     label: Label = Label.UNKNOWN) -> FaceCrop:
    x1, y1, x2, y2 = margin_region(box, frame.height, frame.width, margin_fraction)
    image = ImageBuffer(frame.data[y1:y2, x1:x2], normalized=frame.normalized)
    return FaceCrop(image, video_id, frame_index, box, margin_fraction, label, (x1, y1, x2, y2))


# ---------------------------------------------------------------------------
# SSIM


def to_luma(img: ImageBuffer) -> np.ndarray:
    """float64 luma on the 0-255 scale."""
    data = img.data.astype(np.float64)
    if img.normalized:
        data = data * 255.0
    if data.shape[2] == 1:
        return data[:, :, 0]
    return 0.299 * data[:, :, 0] + 0.587 * data[:, :, 1] + 0.114 * data[:, :, 2]


def ssim_values(a: ImageBuffer, b: ImageBuffer, params: SSIMParams = SSIMParams()) -> np.ndarray:
    """Per-pixel SSIM in [-1, 1] over a uniform window, borders mirrored."""
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(f"size mismatch: {a.height}x{a.width} vs {b.height}x{b.width}")
    x, y = to_luma(a), to_luma(b)

    def mean(v):
        return ndimage.uniform_filter(v, size=params.window, mode="reflect")

    mx, my = mean(x), mean(y)
    mxy = mx * my
    var_x = mean(x * x) - mx * mx
    var_y = mean(y * y) - my * my
    cov = mean(x * y) - mxy
    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    # every term is written symmetrically in x and y so swapping inputs is bit-exact
    num = (2 * mxy + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (var_x + var_y + c2)
    return np.clip(num / den, -1.0, 1.0)


def ssim_map(a: ImageBuffer, b: ImageBuffer, params: SSIMParams = SSIMParams()) -> ImageBuffer:
    """Difference mask 255 * (1 - ssim) / 2, single channel; brighter means more different."""
    s = ssim_values(a, b, params)
    return ImageBuffer(255.0 * (1.0 - s) / 2.0)


def mean_ssim(a: ImageBuffer, b: ImageBuffer, params: SSIMParams = SSIMParams()) -> float:
    return float(ssim_values(a, b, params).mean())


# ---------------------------------------------------------------------------
# frame-directory videos


@dataclass(frozen=True)
class VideoSource:
    video_id: str
    path: Path
    label: Label = Label.UNKNOWN
    original_video_id: Optional[str] = None
    folder: Optional[int] = None

    def meta(self) -> dict:
        return read_meta(self.path)


def read_meta(video_dir: str | Path) -> dict:
    p = Path(video_dir) / META_NAME
    try:
        meta = json.loads(p.read_text())
        int(meta["frame_count"])
    except FileNotFoundError as exc:
        raise DataError(f"{p} missing") from exc
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{p}: malformed meta ({exc})") from exc
    return meta


def load_frame(video_dir: str | Path, index: int) -> ImageBuffer:
    p = Path(video_dir) / FRAME_NAME.format(index)
    try:
        with Image.open(p) as im:
            return ImageBuffer(np.asarray(im.convert("RGB")))
    except FileNotFoundError as exc:
        raise DataError(f"frame {p} missing") from exc


def write_png(path: str | Path, arr: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr.astype(np.uint8)).save(path, format="PNG")


def read_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_video(video_dir: str | Path, frames: Sequence[np.ndarray], fps: float = 30.0) -> None:
    video_dir = Path(video_dir)
    video_dir.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        write_png(video_dir / FRAME_NAME.format(i), f)
    (video_dir / META_NAME).write_text(json.dumps({"fps": fps, "frame_count": len(frames)}) + "\n")


def list_videos(input_dir: str | Path) -> list[VideoSource]:
    """Frame-directory videos under ``input_dir``, labelled from its metadata.json when present."""
    root = Path(input_dir)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    metadata = {}
    if (root / METADATA_NAME).exists():
        metadata = json.loads((root / METADATA_NAME).read_text())
    out = []
    for d in sorted(p for p in root.iterdir() if (p / META_NAME).exists()):
        info = metadata.get(d.name, {})
        out.append(VideoSource(
            video_id=d.name,
            path=d,
            label=Label(info.get("label", "UNKNOWN")),
            original_video_id=info.get("original"),
            folder=info.get("folder"),
        ))
    return out


DEFAULT_DECODER = ("ffmpeg", "-loglevel", "error", "-i", "{input}",
                   "-start_number", "0", "{output}/%06d.png")


def decode_video(video_path: str | Path, out_dir: str | Path,
                 command: Sequence[str] = DEFAULT_DECODER, fps: float = 30.0) -> dict:
    """Run an external decoder that writes 000000.png, 000001.png, ... into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    argv = [c.format(input=str(video_path), output=str(out)) for c in command]
    try:
        subprocess.run(argv, check=True, capture_output=True)
    except (OSError, subprocess.CalledProcessError) as exc:
        raise DataError(f"decoder failed on {video_path}: {exc}") from exc
    count = len(list(out.glob("[0-9]" * 6 + ".png")))
    if count == 0:
        raise DataError(f"decoder produced no frames for {video_path}")
    meta = {"fps": fps, "frame_count": count}
    (out / META_NAME).write_text(json.dumps(meta) + "\n")
    return meta


# ---------------------------------------------------------------------------
# materialisation


@dataclass
class MaterializeReport:
    manifest: DatasetManifest
    errors: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    masks_written: int = 0


@dataclass
class _VideoResult:
    video_id: str
    entries: list[ManifestEntry] = field(default_factory=list)
    masks: int = 0
    warnings: list[str] = field(default_factory=list)
    error: Optional[str] = None


def _materialize_one(video: VideoSource, real_dir: Optional[Path], det_path: Path, out_dir: Path,
                     margin: float, ssim_params: SSIMParams) -> _VideoResult:
    res = _VideoResult(video.video_id)
    try:
        _, frames = load_detections(det_path)
    except FileNotFoundError:
        res.error = f"missing detections {det_path}"
        return res
    except (DataError, json.JSONDecodeError) as exc:
        res.error = str(exc)
        return res
    crop_dir = out_dir / "crops" / video.video_id
    mask_dir = out_dir / "masks" / video.video_id
    for d in (crop_dir, mask_dir):
        if d.exists():
            shutil.rmtree(d)
    want_masks = video.label is Label.FAKE
    if want_masks and real_dir is None:
        res.warnings.append(f"{video.video_id}: no paired real video, masks skipped")
        want_masks = False
    real_count = read_meta(real_dir)["frame_count"] if want_masks else 0
    try:
        for idx in sorted(frames):
            if not frames[idx]:
                continue
            frame = load_frame(video.path, idx)
            real = load_frame(real_dir, idx) if want_masks and idx < real_count else None
            for j, det in enumerate(frames[idx]):
                crop = crop_with_margin(frame, det.box, margin, video.video_id, idx, video.label)
                name = f"{idx}_{j}.png"
                write_png(crop_dir / name, crop.image.to_uint8())
                if video.label is not Label.UNKNOWN:
                    res.entries.append(ManifestEntry(
                        crop_path=f"crops/{video.video_id}/{name}",
                        video_id=video.video_id,
                        frame_index=idx,
                        label=video.label,
                        original_video_id=video.original_video_id,
                        folder=video.folder,
                    ))
                if real is not None:
                    x1, y1, x2, y2 = crop.region
                    ref = ImageBuffer(real.data[y1:y2, x1:x2])
                    mask = ssim_map(crop.image, ref, ssim_params)
                    write_png(mask_dir / name, mask.to_uint8())
                    res.masks += 1
    except DataError as exc:
        res.error = str(exc)
        res.entries = []
    if video.label is Label.UNKNOWN:
        res.warnings.append(f"{video.video_id}: unlabelled, crops written but left out of the manifest")
    return res


def materialize_dataset(videos: Sequence[VideoSource], out_dir: str | Path,
                        detections_dir: str | Path | None = None, margin: float = 0.30,
                        ssim_params: SSIMParams = SSIMParams(), workers: int = 1) -> MaterializeReport:
    """Write crops, masks and manifest.json under ``out_dir`` from per-video detection files."""
    out = Path(out_dir)
    det_dir = Path(detections_dir) if detections_dir is not None else out / "detections"
    if not videos:
        return MaterializeReport(DatasetManifest())
    by_id = {v.video_id: v for v in videos}
    jobs = []
    for v in videos:
        pair = by_id.get(v.original_video_id) if v.original_video_id else None
        real_dir = pair.path if pair is not None and pair.label is Label.REAL else None
        jobs.append((v, real_dir, det_dir / f"{v.video_id}.json", out, margin, ssim_params))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_materialize_one, *zip(*jobs)))
    else:
        results = [_materialize_one(*j) for j in jobs]

    report = MaterializeReport(DatasetManifest())
    entries: list[ManifestEntry] = []
    for r in results:
        report.warnings.extend(r.warnings)
        if r.error:
            report.errors[r.video_id] = r.error
            continue
        entries.extend(r.entries)
        report.masks_written += r.masks
    for w in report.warnings:
        log.warning(w)
    if len(report.errors) == len(videos):
        raise DataError(f"no video materialised: {report.errors}")
    real_ids = {e.video_id for e in entries if e.label is Label.REAL}
    orphans = sorted({e.video_id for e in entries
                      if e.original_video_id and e.original_video_id not in real_ids})
    if orphans:
        report.warnings.append(f"original video missing from manifest for {orphans}; pairing dropped")
        log.warning(report.warnings[-1])
        entries = [replace(e, original_video_id=None) if e.video_id in orphans else e for e in entries]
    entries.sort(key=lambda e: (e.video_id, e.frame_index, e.crop_path))
    manifest = DatasetManifest(tuple(entries))
    problems = validate_manifest(manifest)
    if problems:
        raise DataError(f"manifest invalid: {problems[:5]}")
    save_manifest(manifest, out / "manifest.json")
    report.manifest = manifest
    return report
