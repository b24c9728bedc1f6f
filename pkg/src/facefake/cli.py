"""Command-line entry point: synth, extract, train, predict, evaluate, train-detector.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Results are reproducible for a fixed --seed with --workers 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as config_mod
from .aggregation import aggregate_video
from .classifier.checkpoint import CheckpointError, load_checkpoint
from .classifier.model import EfficientNetClassifier
from .config import RunConfig
from .core import (
    ConfigError,
    DataError,
    FacefakeError,
    FramePrediction,
    Label,
    NumericError,
    VideoPrediction,
    load_manifest,
)
from .detector.cascade import CascadeConfig, detect_faces, save_detections
from .inference import predict_array, prepare_crop
from .metrics import REFERENCE_ROWS, LabeledPredictionSet, comparison_table, evaluate
from .preprocess import (
    SamplingPlan,
    VideoSource,
    crop_with_margin,
    list_videos,
    load_frame,
    materialize_dataset,
    read_meta,
    read_png,
    sample_frames,
)

log = logging.getLogger("facefake")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# detector construction


def build_scorers(cfg: RunConfig):
    kind = cfg.detector.scorer.lower()
    if kind == "blob":
        from .detector.scorers import blob_scorers
        return blob_scorers(cfg.detector.blob_context)
    if kind == "cnn":
        from .detector.nets import load_scorers
        if not cfg.detector.weights:
            raise ConfigError("detector.scorer=cnn needs detector.weights")
        return load_scorers(cfg.detector.weights)
    raise ConfigError(f"unknown detector.scorer {cfg.detector.scorer!r} (blob or cnn)")


def _detect_video(video: VideoSource, out_path: Path, cfg: RunConfig) -> tuple[str, Optional[str], int]:
    try:
        scorers = build_scorers(cfg)
        cascade = cfg.cascade_config()
        plan = cfg.sampling_plan()
        count = int(read_meta(video.path)["frame_count"])
        frames = {}
        for idx in sample_frames(count, plan):
            frames[idx] = detect_faces(load_frame(video.path, idx), scorers, cascade)
        save_detections(out_path, video.video_id, frames)
        return video.video_id, None, sum(len(v) for v in frames.values())
    except FacefakeError as exc:
        return video.video_id, str(exc), 0


def _map(fn, jobs: Sequence[tuple], workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, *zip(*jobs)))
    return [fn(*j) for j in jobs]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(out_dir: str | Path, n_videos: int, seed: int, fake_ratio: float = 0.5,
              n_frames: int = 36) -> dict:
    from .synth import SynthSpec, generate
    spec = SynthSpec(n_videos=n_videos, fake_ratio=fake_ratio, n_frames=n_frames, seed=seed)
    meta = generate(out_dir, spec)
    n_fake = sum(1 for v in meta.values() if v["label"] == "FAKE")
    print(f"wrote {len(meta)} videos ({n_fake} fake) to {out_dir}")
    return meta


def cmd_extract(input_dir: str | Path, out_dir: str | Path, cfg: RunConfig) -> int:
    """Sampling -> detection -> crops -> masks -> manifest."""
    videos = list_videos(input_dir)
    if not videos:
        raise DataError(f"no frame-directory videos under {input_dir}")
    out = Path(out_dir)
    det_dir = out / "detections"
    jobs = [(v, det_dir / f"{v.video_id}.json", cfg) for v in videos]
    results = _map(_detect_video, jobs, cfg.workers)
    for vid, err, n in results:
        if err:
            log.warning("%s: detection failed: %s", vid, err)
        else:
            log.info("%s: %d faces", vid, n)
    ok = [v for v, (_, err, _) in zip(videos, results) if not err]
    if not ok:
        raise DataError("detection failed for every video")
    report = materialize_dataset(ok, out, det_dir, cfg.preprocess.margin, cfg.ssim_params(), cfg.workers)
    failed = len(videos) - len(ok) + len(report.errors)
    print(f"extracted {len(report.manifest)} crops from {len(ok) - len(report.errors)} videos "
          f"({report.masks_written} masks, {failed} failed) into {out}")
    return EXIT_OK


def cmd_train(manifest_path: str | Path, out_dir: str | Path, cfg: RunConfig):
    from .training import train
    manifest = load_manifest(manifest_path)
    data_root = Path(cfg.paths.data_root) if cfg.paths.data_root else Path(manifest_path).parent
    import torch
    torch.manual_seed(cfg.seed)
    model = EfficientNetClassifier(cfg.backbone_config())
    result = train(model, manifest, cfg.training_config(), data_root, out_dir, cfg.aggregation_config())
    final = result.reports[-1] if result.reports else None
    if final is not None:
        print(f"final holdout: logloss {final.logloss_overall:.4f} real {_fmt(final.logloss_real)} "
              f"fake {_fmt(final.logloss_fake)} auc {_fmt(final.auc)}")
        print(f"best holdout: step {result.best.step} logloss {result.best.logloss_overall:.4f}")
    print(f"checkpoint {result.checkpoint} ({result.seconds:.0f}s)")
    return result


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def _crop_sources(input_dir: Path, folders: Optional[set[int]]) -> dict[str, list[tuple[int, Path]]]:
    """video_id -> [(frame_index, crop path)] from an extract output directory."""
    folder_of: dict[str, Optional[int]] = {}
    if (input_dir / "manifest.json").exists():
        for e in load_manifest(input_dir / "manifest.json"):
            folder_of[e.video_id] = e.folder
    out: dict[str, list[tuple[int, Path]]] = {}
    for vdir in sorted(p for p in (input_dir / "crops").iterdir() if p.is_dir()):
        if folders is not None and folder_of.get(vdir.name) not in folders:
            continue
        items = []
        for f in vdir.glob("*.png"):
            frame, _, _ = f.stem.partition("_")
            items.append((int(frame), f))
        out[vdir.name] = sorted(items)
    return out


def _video_crops(video: VideoSource, cfg: RunConfig, scorers, cascade: CascadeConfig,
                 plan: SamplingPlan) -> list[tuple[int, np.ndarray]]:
    out = []
    count = int(read_meta(video.path)["frame_count"])
    for idx in sample_frames(count, plan):
        frame = load_frame(video.path, idx)
        for det in detect_faces(frame, scorers, cascade):
            out.append((idx, crop_with_margin(frame, det.box, cfg.preprocess.margin).image.to_uint8()))
    return out


def cmd_predict(input_path: str | Path, checkpoint: str | Path, out_dir: str | Path, cfg: RunConfig,
                folders: Optional[Sequence[int]] = None) -> dict[str, VideoPrediction]:
    """Write predictions.csv (filename,label = p_fake) and report.json."""
    model, _ = load_checkpoint(checkpoint)
    res = model.cfg.input_resolution
    agg = cfg.aggregation_config()
    src = Path(input_path)
    folder_set = set(folders) if folders is not None else None

    per_video: dict[str, list[tuple[int, np.ndarray]]] = {}
    if (src / "crops").is_dir():
        for vid, items in _crop_sources(src, folder_set).items():
            per_video[vid] = [(idx, read_png(p)) for idx, p in items]
    else:
        videos = list_videos(src)
        if folder_set is not None:
            videos = [v for v in videos if v.folder in folder_set]
        scorers, cascade, plan = build_scorers(cfg), cfg.cascade_config(), cfg.sampling_plan()
        for v in videos:
            per_video[v.video_id] = _video_crops(v, cfg, scorers, cascade, plan)
    if not per_video:
        raise DataError(f"nothing to predict under {src}")

    results: dict[str, VideoPrediction] = {}
    extra: dict[str, dict] = {}
    for vid in sorted(per_video):
        items = per_video[vid]
        if not items:
            # no face found: uninformative prior
            results[vid] = VideoPrediction(vid, 0.5, 0, 0, False)
            extra[vid] = {"no_faces": True}
            continue
        crops = np.stack([prepare_crop(img, res) for _, img in items])
        probs = predict_array(model, crops)
        preds = [FramePrediction(vid, idx, float(p)) for (idx, _), p in zip(items, probs)]
        results[vid] = aggregate_video(preds, agg)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "predictions.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "label"])
        for vid, vp in results.items():
            w.writerow([vid, f"{vp.p_fake:.6f}"])
    report = {
        "aggregation": {k: getattr(v, "value", v) for k, v in asdict(agg).items()},
        "checkpoint": str(checkpoint),
        "videos": {vid: {**vp.to_dict(), **extra.get(vid, {})} for vid, vp in results.items()},
    }
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(f"predicted {len(results)} videos -> {out / 'predictions.csv'}")
    return results


def read_predictions(path: str | Path) -> dict[str, float]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != {"filename", "label"}:
        raise DataError(f"{path}: expected header filename,label")
    return {r["filename"]: float(r["label"]) for r in rows}


def read_labels(path: str | Path) -> dict[str, int]:
    """labels.csv (filename,label with 0/1 or REAL/FAKE) or a metadata.json mapping."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        return {k: Label(v["label"]).target for k, v in doc.items()}
    out = {}
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            raw = row["label"].strip().upper()
            out[row["filename"]] = Label(raw).target if raw in ("REAL", "FAKE") else int(float(raw))
    return out


def cmd_evaluate(predictions: str | Path, labels: str | Path, out: Optional[str | Path] = None,
                 threshold: float = 0.5, name: str = "This run") -> dict:
    preds = read_predictions(predictions)
    truth = read_labels(labels)
    unknown = sorted(set(preds) - set(truth))
    if unknown:
        raise DataError(f"no label for {unknown[:5]}")
    if not preds:
        raise DataError(f"{predictions} holds no predictions")
    vids = sorted(preds)
    s = LabeledPredictionSet(tuple(truth[v] for v in vids), tuple(preds[v] for v in vids))
    report = evaluate(s, threshold).to_dict()
    table = comparison_table([{"name": name, "logloss": report["logloss"], "auc": report["auc"],
                               "f1": report["f1"]}, *REFERENCE_ROWS])
    print(json.dumps(report, indent=1))
    print(table)
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
        out.with_suffix(".txt").write_text(table + "\n")
    return report


def cmd_train_detector(out_path: str | Path, steps: int, seed: int) -> None:
    from .detector.nets import save_scorers, train_stage_nets
    nets, losses = train_stage_nets(steps=steps, seed=seed)
    save_scorers(nets, out_path)
    print(f"stage nets trained ({steps} steps each), final losses "
          + ", ".join(f"{v:.4f}" for v in losses) + f" -> {out_path}")


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help=f"YAML/JSON config file (fallback: ${config_mod.ENV_CONFIG})")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    group = p.add_argument_group("config leaves")
    for flag, key, _ in config_mod.leaf_flags():
        group.add_argument(flag, dest=key, default=None, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="facefake", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic frame-directory dataset")
    p.add_argument("out_dir")
    p.add_argument("--n-videos", type=int, default=60)
    p.add_argument("--fake-ratio", type=float, default=0.5)
    p.add_argument("--n-frames", type=int, default=36)
    _add_config_flags(p)

    p = sub.add_parser("extract", help="detect faces and materialise crops, masks and manifest")
    p.add_argument("input_dir")
    p.add_argument("out_dir")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train the classifier on a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="run directory for checkpoints and log")
    _add_config_flags(p)

    p = sub.add_parser("predict", help="video-level fake probabilities")
    p.add_argument("input", help="extract output dir (crops/) or a frame-directory video root")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--folders", default=None, help="comma-separated folder ids to restrict to")
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="metrics and comparison table")
    p.add_argument("predictions")
    p.add_argument("labels", nargs="?", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    _add_config_flags(p)

    p = sub.add_parser("train-detector", help="train the convolutional stage scorers on synthetic faces")
    p.add_argument("out")
    p.add_argument("--steps", type=int, default=600)
    _add_config_flags(p)
    return ap


def _resolve(args: argparse.Namespace) -> RunConfig:
    flags = {key: getattr(args, key, None) for _, key, _ in config_mod.leaf_flags()}
    flags["seed"] = args.seed
    flags["workers"] = args.workers
    return config_mod.resolve(args.config, flags)


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        if args.command == "synth":
            cmd_synth(args.out_dir, args.n_videos, cfg.seed, args.fake_ratio, args.n_frames)
        elif args.command == "extract":
            cmd_extract(args.input_dir, args.out_dir, cfg)
        elif args.command == "train":
            cmd_train(args.manifest, args.out, cfg)
        elif args.command == "predict":
            ckpt = args.checkpoint or cfg.paths.checkpoint
            if not ckpt:
                raise ConfigError("predict needs --checkpoint or paths.checkpoint")
            folders = [int(f) for f in args.folders.split(",")] if args.folders else None
            cmd_predict(args.input, ckpt, args.out, cfg, folders)
        elif args.command == "evaluate":
            labels = args.labels or cfg.paths.labels
            if not labels:
                raise ConfigError("evaluate needs a labels file")
            cmd_evaluate(args.predictions, labels, args.out, args.threshold)
        elif args.command == "train-detector":
            cmd_train_detector(args.out, args.steps, cfg.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
