"""One test per acceptance criterion; the terminal summary prints a PASS/FAIL line for each.

Run on its own with ``pytest tests/test_acceptance.py -v``. The end-to-end
benchmark takes a few minutes on a laptop CPU.
"""

import json
import math
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
import torch

from facefake.aggregation import AggregationConfig, aggregate_video
from facefake.classifier import (
    EfficientNetClassifier,
    ScalingConfig,
    ScalingConstraintWarning,
    build_variant,
    compound_multipliers,
    count_params,
    walk_plan,
)
from facefake.cli import run
from facefake.core import FramePrediction, ImageBuffer, Label, ManifestEntry, DatasetManifest
from facefake.detector import CascadeConfig, CascadeTrace, blob_scorers, detect_faces
from facefake.detector.geometry import iou_one_to_many, nms_indices
from facefake.metrics import REFERENCE_ROWS, LabeledPredictionSet, comparison_table, evaluate, log_loss, roc_auc
from facefake.preprocess import ssim_map, ssim_values
from facefake.training import MomentumSGD, TrainingConfig, balanced_batches, poly_lr

from helpers import random_boxes, square_frame
from oracles import auc_pairs, nms_ref, ssim_at

criterion = pytest.mark.criterion

# published comparison rows, kept here as an independent copy of the values
PUBLISHED = [
    ("Proposed MTCNN-EfficientNetB5", "0.4278", "0.9380", "0.8682"),
    ("EfficientNet-Vision Transformer", "-", "0.951", "0.88"),
    ("Ensemble CNN", "0.464", "-", "-"),
]


def cells(line):
    return [c.strip() for c in line.strip("|").split("|")]


# ---------------------------------------------------------------------------


@criterion("headline numbers: not reproducible at desk scale, substituted")
def test_headline_numbers_substituted():
    # The published figures need the full challenge corpus and GPU training. They are carried
    # as static reference rows only; the suites below and the synthetic benchmark stand in.
    rows = {r["name"]: r for r in REFERENCE_ROWS}
    top = rows["Proposed MTCNN-EfficientNetB5"]
    assert (top["logloss"], top["auc"], top["f1"]) == ("0.4278", "0.9380", "0.8682")
    print("\nheadline figures not reproduced; see the synthetic end-to-end benchmark")


# -- synthetic end-to-end ----------------------------------------------------

E2E_STEPS = 500


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    t0 = time.perf_counter()
    codes = [
        run(["synth", str(root / "data"), "--n-videos", "60", "--seed", "7"]),
        run(["extract", str(root / "data"), str(root / "ex")]),
        run(["train", str(root / "ex" / "manifest.json"), "--out", str(root / "run"),
             "--classifier.width_budget", "0.1", "--classifier.input_resolution", "64",
             "--training.total_steps", str(E2E_STEPS), "--training.validate_every", "100", "--seed", "7"]),
        run(["predict", str(root / "ex"), "--checkpoint", str(root / "run" / "best.pt"),
             "--out", str(root / "pred"), "--folders", "0,1,2"]),
        run(["evaluate", str(root / "pred" / "predictions.csv"), str(root / "data" / "labels.csv"),
             "--out", str(root / "eval.json")]),
    ]
    seconds = time.perf_counter() - t0
    report = json.loads((root / "eval.json").read_text()) if codes[-1] == 0 else None
    return {"codes": codes, "seconds": seconds, "report": report, "root": root}


@pytest.mark.slow
@criterion("synthetic end-to-end: AUC >= 0.90, log loss <= 0.45, <= 15 min")
def test_synthetic_end_to_end(e2e):
    assert e2e["codes"] == [0, 0, 0, 0, 0]
    rep = e2e["report"]
    print(f"\nholdout videos {rep['n_videos']}: logloss {rep['logloss']:.4f} auc {rep['auc']:.4f} "
          f"f1 {rep['f1']:.4f}; {e2e['seconds']:.0f}s end to end, B5 at width 0.1 / 64 px, {E2E_STEPS} steps")
    assert rep["auc"] >= 0.90
    assert rep["logloss"] <= 0.45
    assert e2e["seconds"] <= 15 * 60


@pytest.mark.slow
def test_synthetic_fake_loss_below_real(e2e):
    lines = [json.loads(x) for x in (e2e["root"] / "run" / "train_log.jsonl").read_text().splitlines()]
    last = [x for x in lines if "logloss_overall" in x][-1]
    assert last["logloss_fake"] < last["logloss_real"]


# -- metrics -----------------------------------------------------------------


@criterion("metrics oracles")
def test_metrics_oracles():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 51))
        y = list(rng.integers(0, 2, n))
        y[0], y[1] = 0, 1
        p = list(np.round(rng.random(n), 1 if seed % 2 else 6))
        assert abs(roc_auc(LabeledPredictionSet(tuple(y), tuple(p))) - auc_pairs(y, p)) <= 1e-9
    flat = LabeledPredictionSet((0, 1, 1, 0, 1), (0.5,) * 5)
    assert abs(log_loss(flat) - math.log(2)) <= 1e-12

    case = json.loads((Path(__file__).parent / "fixtures" / "metrics_case.json").read_text())
    rep = evaluate(LabeledPredictionSet(tuple(case["y"]), tuple(case["p_hat"])), case["threshold"])
    exp = case["expected"]
    assert (rep.precision, rep.recall, rep.f1, rep.auc) == (exp["precision"], exp["recall"], exp["f1"], exp["auc"])
    for key in ("logloss", "logloss_real", "logloss_fake"):
        assert abs(getattr(rep, key) - exp[key]) <= 1e-15


# -- detector ----------------------------------------------------------------


@criterion("NMS matches brute-force oracle")
def test_nms_oracle():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(0, 21))
        boxes = random_boxes(rng, n)
        scores = np.round(rng.random(n), 1)
        thr = float(rng.uniform(0.05, 1.0))
        for mode in ("UNION", "MIN"):
            assert list(nms_indices(boxes, scores, thr, mode)) == nms_ref(boxes.tolist(), scores.tolist(), thr, mode)


@criterion("cascade monotonicity and synthetic squares, 100 seeds")
def test_cascade_squares_100_seeds():
    scorers = blob_scorers()
    for seed in range(100):
        for n in (1, 2):
            frame, squares = square_frame(seed, n)
            trace = CascadeTrace()
            dets = detect_faces(frame, scorers, CascadeConfig(), trace)
            assert trace.counts[0] >= trace.counts[1] >= trace.counts[2] == len(dets)
            assert len(dets) == n, (seed, n)
            for d in dets:
                assert max(iou_one_to_many(np.array(d.box.as_list()), np.array(squares), "UNION")) >= 0.6


# -- SSIM --------------------------------------------------------------------


@criterion("SSIM identity, symmetry and probe oracle")
def test_ssim():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = ImageBuffer(rng.integers(0, 256, (32, 32, 3), dtype=np.uint8))
        b = ImageBuffer(rng.integers(0, 256, (32, 32, 3), dtype=np.uint8))
        assert np.all(ssim_map(a, a).data == 0)
        assert np.array_equal(ssim_values(a, b), ssim_values(b, a))
    a = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    b = np.clip(a.astype(int) + rng.integers(-40, 40, a.shape), 0, 255).astype(np.uint8)
    s = ssim_values(ImageBuffer(a), ImageBuffer(b))
    la = (0.299 * a[..., 0] + 0.587 * a[..., 1] + 0.114 * a[..., 2]).tolist()
    lb = (0.299 * b[..., 0] + 0.587 * b[..., 1] + 0.114 * b[..., 2]).tolist()
    for r, c in [(0, 0), (3, 17), (15, 15), (31, 0), (20, 31)]:
        assert abs(s[r, c] - ssim_at(la, lb, r, c)) <= 1e-6


# -- classifier --------------------------------------------------------------


@criterion("classifier walker, gradient check, eval determinism")
def test_classifier():
    for variant in ("B0", "B1", "B2", "B3", "B4", "B5"):
        for budget in (1.0, 0.25, 0.1):
            cfg = build_variant(variant, width_budget=budget, resolution=32)
            model = EfficientNetClassifier(cfg).eval()
            rep = walk_plan(cfg)
            assert rep.total_params == count_params(model)
            shapes = {layer.name: layer.output_shape for layer in rep.layers}
            with torch.no_grad():
                x = model.stem(torch.zeros(1, 3, 32, 32))
                assert tuple(x.shape[1:]) == shapes["stem"]
                for k, block in enumerate(model.blocks):
                    x = block(x)
                    assert tuple(x.shape[1:]) == shapes[f"blocks.{k}"]

    torch.manual_seed(1)
    cfg = build_variant("B0", width_budget=0.1, resolution=32, dropout=0.0, drop_connect=0.0)
    model = EfficientNetClassifier(cfg).double().eval()
    x = torch.randn(3, 3, 32, 32, dtype=torch.float64)
    y = torch.tensor([[1.0], [0.0], [1.0]], dtype=torch.float64)

    def loss_fn():
        return torch.nn.functional.binary_cross_entropy_with_logits(model.logits(x), y)

    params = list(model.parameters())
    grads = torch.autograd.grad(loss_fn(), params)
    flat = [(i, j) for i, p in enumerate(params) for j in range(p.numel())]
    rng = np.random.default_rng(0)
    for k in rng.choice(len(flat), 20, replace=False):
        i, j = flat[k]
        p = params[i].data.view(-1)
        orig = p[j].item()
        with torch.no_grad():
            p[j] = orig + 1e-6
            up = loss_fn().item()
            p[j] = orig - 1e-6
            down = loss_fn().item()
            p[j] = orig
        numeric, analytic = (up - down) / 2e-6, grads[i].view(-1)[j].item()
        assert abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8) <= 1e-3

    with torch.no_grad():
        z = torch.randn(5, 3, 32, 32, dtype=torch.float64)
        assert torch.equal(model(z), model(z))


@criterion("compound scaling")
def test_compound_scaling():
    assert compound_multipliers(ScalingConfig(phi=0)) == {"depth_mult": 1.0, "width_mult": 1.0,
                                                          "resolution_mult": 1.0}
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ScalingConfig(alpha=1.2, beta=1.1, gamma=1.15)
    for a, b, g in ((1.5, 1.2, 1.2), (1.01, 1.01, 1.01)):
        with pytest.warns(ScalingConstraintWarning):
            ScalingConfig(alpha=a, beta=b, gamma=g)
    counts = [walk_plan(build_variant(ScalingConfig(phi=phi))).total_params for phi in (0, 0.5, 1, 2)]
    assert counts == sorted(counts)


# -- aggregation -------------------------------------------------------------


def _frames(ps):
    return [FramePrediction("v", i, p) for i, p in enumerate(ps)]


@criterion("aggregation worked examples and properties")
def test_aggregation():
    assert abs(aggregate_video(_frames([0.7] * 5)).p_fake - 0.7) <= 1e-12
    v = aggregate_video(_frames([0.95, 0.55, 0.40]))
    assert abs(v.p_fake - 2.3 / 3) <= 1e-12 and (v.frames_used, v.frames_discarded) == (2, 1)
    fb = aggregate_video(_frames([0.55, 0.52, 0.58]))
    assert abs(fb.p_fake - 0.55) <= 1e-12 and fb.fallback_used

    mean_cfg = AggregationConfig(low_conf=0.5, high_conf=1.0, high_weight=1.0)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        ps = list(rng.random(int(rng.integers(1, 40))))
        base = aggregate_video(_frames(ps))
        perm = rng.permutation(len(ps))
        assert aggregate_video(_frames([ps[i] for i in perm])).p_fake == base.p_fake
        assert abs(aggregate_video(_frames(ps), mean_cfg).p_fake - math.fsum(ps) / len(ps)) <= 1e-12


# -- training ----------------------------------------------------------------


@criterion("training schedule, balanced batches, zero lr, overfit")
def test_training(tmp_path):
    cfg = TrainingConfig(base_lr=0.01, total_steps=100)
    assert poly_lr(0, cfg) == 0.01 and poly_lr(100, cfg) == 0.0

    entries = [ManifestEntry(f"r{i}.png", f"r{i}", 0, Label.REAL, None, 0) for i in range(200)]
    entries += [ManifestEntry(f"f{i}.png", f"f{i}", 0, Label.FAKE, None, 0) for i in range(20)]
    m = DatasetManifest(tuple(entries))
    labels = np.array([e.label.target for e in m.entries])
    gen = balanced_batches(m, 16, 0)
    for _ in range(1000):
        assert labels[next(gen)].sum() == 8

    torch.manual_seed(0)
    model = EfficientNetClassifier(build_variant("B0", width_budget=0.1, resolution=32))
    before = [p.detach().clone() for p in model.parameters()]
    opt = MomentumSGD(model.parameters(), 0.9)
    for _ in range(5):
        out = model.logits(torch.randn(4, 3, 32, 32))
        loss = torch.nn.functional.binary_cross_entropy_with_logits(out, torch.tensor([[0.0], [1.0]] * 2))
        opt.zero_grad()
        loss.backward()
        opt.step(0.0)
    assert all(torch.equal(a, b) for a, b in zip(before, model.parameters()))

    # one fixed batch, many steps: the loss must fall
    torch.manual_seed(0)
    model = EfficientNetClassifier(build_variant("B0", width_budget=0.1, resolution=32, dropout=0.0))
    opt = MomentumSGD(model.parameters(), 0.9)
    x = torch.randn(4, 3, 32, 32)
    y = torch.tensor([[0.0], [1.0], [0.0], [1.0]])
    model.train()
    losses = []
    for _ in range(60):
        loss = torch.nn.functional.binary_cross_entropy_with_logits(model.logits(x), y)
        opt.zero_grad()
        loss.backward()
        opt.step(0.05)
        losses.append(loss.item())
    assert np.mean(losses[-5:]) < 0.5 * losses[0]


# -- comparison table --------------------------------------------------------


@criterion("comparison table layout with the three published rows")
def test_comparison_table():
    table = comparison_table(list(REFERENCE_ROWS))
    print("\n" + table)
    lines = table.splitlines()
    assert cells(lines[1]) == ["Model", "Log loss", "AUC", "F1 score"]
    assert [tuple(cells(ln)) for ln in lines[3::2]] == PUBLISHED
    # every row ruled, as in the published table
    assert all(ln.startswith("+") for ln in lines[0::2]) and len(lines) == 2 * len(PUBLISHED) + 3
