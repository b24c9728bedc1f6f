"""Training loop: balanced batches, momentum SGD, polynomial decay, label smoothing."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .aggregation import AggregationConfig, aggregate_all
from .classifier.checkpoint import save_checkpoint
from .classifier.model import EfficientNetClassifier
from .core import DataError, DatasetManifest, Label, NumericError, entries_by_video
from .inference import frame_predictions, load_crop_array, predict_array, to_tensor
from .metrics import LabeledPredictionSet, log_loss, per_class_log_loss, roc_auc

log = logging.getLogger(__name__)

# default batch size per variant; larger networks get smaller batches
VARIANT_BATCH_SIZES = {"B0": 64, "B1": 64, "B2": 48, "B3": 32, "B4": 24, "B5": 16, "B6": 8, "B7": 8}


@dataclass(frozen=True)
class TrainingConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    poly_power: float = 1.0
    total_steps: int = 2000
    batch_size: Optional[int] = None
    label_smoothing_eps: float = 0.05
    holdout_folders: tuple[int, ...] = (0, 1, 2)
    seed: int = 0
    validate_every: int = 200
    hflip: bool = True

    def __post_init__(self):
        if self.base_lr < 0:
            raise ValueError("base_lr must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.poly_power <= 0:
            raise ValueError("poly_power must be > 0")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be > 0")
        if self.batch_size is not None and (self.batch_size < 2 or self.batch_size % 2):
            raise ValueError("batch_size must be even and >= 2")
        if not 0 <= self.label_smoothing_eps < 0.5:
            raise ValueError("label_smoothing_eps must be in [0, 0.5)")
        object.__setattr__(self, "holdout_folders", tuple(sorted(int(f) for f in self.holdout_folders)))

    def resolved_batch_size(self, variant: str = "B5") -> int:
        if self.batch_size is not None:
            return self.batch_size
        return VARIANT_BATCH_SIZES.get(variant.upper(), 16)


@dataclass
class ValidationReport:
    step: int
    logloss_overall: float
    logloss_real: Optional[float]
    logloss_fake: Optional[float]
    auc: Optional[float] = None


def poly_lr(step: int, cfg: TrainingConfig) -> float:
    if step >= cfg.total_steps:
        return 0.0
    return cfg.base_lr * (1.0 - step / cfg.total_steps) ** cfg.poly_power


def smooth_labels(y, eps: float):
    """Hard 0/1 targets pulled to eps/2 and 1 - eps/2; works on scalars, arrays and tensors."""
    return y * (1 - eps) + eps / 2


def split_by_folder(manifest: DatasetManifest,
                    holdout_folders: Sequence[int]) -> tuple[DatasetManifest, DatasetManifest]:
    holdout = set(holdout_folders)
    for vid, entries in entries_by_video(manifest.entries).items():
        if len({e.folder for e in entries}) > 1:
            raise DataError(f"video {vid} spans several folders")
    if holdout and any(e.folder is None for e in manifest.entries):
        log.warning("entries without a folder id always go to the training side")
    val = manifest.filter(lambda e: e.folder is not None and e.folder in holdout)
    train = manifest.filter(lambda e: not (e.folder is not None and e.folder in holdout))
    return train, val


def balanced_batches(manifest: DatasetManifest, batch_size: int, seed: int) -> Iterator[list[int]]:
    """Endless stream of entry-index batches, each exactly half REAL and half FAKE.

    One epoch walks a fresh permutation of the larger class; the smaller
    class is drawn with replacement to match.
    """
    if batch_size < 2 or batch_size % 2:
        raise ValueError("batch_size must be even and >= 2")
    half = batch_size // 2
    real = np.array([i for i, e in enumerate(manifest.entries) if e.label is Label.REAL])
    fake = np.array([i for i, e in enumerate(manifest.entries) if e.label is Label.FAKE])
    if not len(real) or not len(fake):
        raise DataError("balanced sampling needs at least one REAL and one FAKE crop")
    rng = np.random.default_rng(seed)
    n_batches = math.ceil(max(len(real), len(fake)) / half)
    need = n_batches * half

    def draw(pool: np.ndarray, majority: bool) -> np.ndarray:
        # the larger class (both, when equal) walks a permutation; a smaller one repeats
        if majority:
            idx = rng.permutation(pool)
            if len(idx) < need:
                idx = np.concatenate([idx, rng.choice(pool, need - len(idx), replace=True)])
            return idx
        return rng.choice(pool, need, replace=True)

    while True:
        r = draw(real, len(real) >= len(fake))
        f = draw(fake, len(fake) >= len(real))
        for b in range(n_batches):
            batch = np.concatenate([r[b * half:(b + 1) * half], f[b * half:(b + 1) * half]])
            yield [int(i) for i in rng.permutation(batch)]


class MomentumSGD:
    """v <- momentum * v + g;  theta <- theta - lr * v."""

    def __init__(self, params, momentum: float = 0.9):
        self.params = [p for p in params if p.requires_grad]
        self.momentum = momentum
        self.velocity = [torch.zeros_like(p) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    @torch.no_grad()
    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v.mul_(self.momentum).add_(p.grad)
            p.sub_(lr * v)


@dataclass
class TrainResult:
    checkpoint: Path
    last_checkpoint: Path
    log_path: Path
    reports: list[ValidationReport] = field(default_factory=list)
    best: Optional[ValidationReport] = None
    losses: list[float] = field(default_factory=list)
    seconds: float = 0.0


def validate(model: EfficientNetClassifier, crops: np.ndarray, manifest: DatasetManifest,
             agg: AggregationConfig, step: int) -> ValidationReport:
    probs = predict_array(model, crops)
    preds = frame_predictions([e.video_id for e in manifest.entries],
                              [e.frame_index for e in manifest.entries], probs)
    videos = aggregate_all(preds, agg)
    label = {e.video_id: e.label.target for e in manifest.entries}
    s = LabeledPredictionSet(tuple(label[v] for v in videos), tuple(vp.p_fake for vp in videos.values()))
    per_class = per_class_log_loss(s)
    both = 0 < sum(s.y) < len(s)
    return ValidationReport(step, log_loss(s), per_class["real"], per_class["fake"],
                            roc_auc(s) if both else None)


def train(model: EfficientNetClassifier, manifest: DatasetManifest, cfg: TrainingConfig,
          data_root: str | Path, out_dir: str | Path,
          agg: AggregationConfig = AggregationConfig()) -> TrainResult:
    """Train in place; writes best.pt, last.pt and train_log.jsonl under ``out_dir``.

    The best checkpoint is chosen by overall video-level holdout log loss; with
    no holdout data the last weights double as best.
    """
    t0 = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_m, val_m = split_by_folder(manifest, cfg.holdout_folders)
    if not len(train_m):
        raise DataError("no training crops left after the holdout split")
    res = model.cfg.input_resolution
    batch_size = cfg.resolved_batch_size(model.cfg.name)
    x_train = load_crop_array(data_root, train_m, res)
    y_train = np.array([e.label.target for e in train_m.entries], dtype=np.float32)
    x_val = load_crop_array(data_root, val_m, res) if len(val_m) else None

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    batches = balanced_batches(train_m, batch_size, cfg.seed)
    opt = MomentumSGD(model.parameters(), cfg.momentum)
    result = TrainResult(out / "best.pt", out / "last.pt", out / "train_log.jsonl")
    log_file = result.log_path.open("w")

    def record(obj: dict) -> None:
        log_file.write(json.dumps(obj) + "\n")

    def run_validation(step: int) -> None:
        if x_val is None:
            return
        rep = validate(model, x_val, val_m, agg, step)
        result.reports.append(rep)
        record({k: v for k, v in asdict(rep).items()})
        log.info("step %d holdout logloss %.4f (real %s, fake %s) auc %s", step, rep.logloss_overall,
                 rep.logloss_real, rep.logloss_fake, rep.auc)
        if result.best is None or rep.logloss_overall < result.best.logloss_overall:
            result.best = rep
            save_checkpoint(model, result.checkpoint, {"step": step, "validation": asdict(rep)})

    try:
        model.train()
        for step in range(cfg.total_steps):
            idx = next(batches)
            xb = x_train[idx]
            if cfg.hflip:
                flip = rng.random(len(idx)) < 0.5
                xb = xb.copy()
                xb[flip] = xb[flip, :, ::-1]
            target = torch.from_numpy(smooth_labels(y_train[idx], cfg.label_smoothing_eps)).reshape(-1, 1)
            lr = poly_lr(step, cfg)
            logits = model.logits(to_tensor(xb))
            loss = F.binary_cross_entropy_with_logits(logits, target)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at step {step} (lr {lr:.3g}); "
                                   f"batch crops {[train_m.entries[i].crop_path for i in idx][:8]}")
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            result.losses.append(value)
            record({"step": step, "lr": lr, "loss": value})
            if cfg.validate_every and (step + 1) % cfg.validate_every == 0 and step + 1 < cfg.total_steps:
                run_validation(step + 1)
                model.train()
        run_validation(cfg.total_steps)
    finally:
        log_file.close()
    save_checkpoint(model, result.last_checkpoint, {"step": cfg.total_steps})
    if result.best is None:
        save_checkpoint(model, result.checkpoint, {"step": cfg.total_steps})
    result.seconds = time.time() - t0
    return result
