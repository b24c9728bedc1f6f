import json
import math
from pathlib import Path

import numpy as np
import pytest
import torch

from facefake.classifier import EfficientNetClassifier, build_variant, save_checkpoint
from facefake.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, run
from facefake.preprocess import write_png

TINY = ["--classifier.variant", "B0", "--classifier.width_budget", "0.1", "--classifier.input_resolution", "32"]


def train_args(manifest, out, steps=4, seed=0):
    return ["train", str(manifest), "--out", str(out), *TINY, "--training.total_steps", str(steps),
            "--training.batch_size", "2", "--training.holdout_folders", "0", "--training.validate_every", "2",
            "--seed", str(seed)]


@pytest.fixture(scope="module")
def extracted(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run(["synth", str(root / "data"), "--n-videos", "4", "--n-frames", "4", "--seed", "3"]) == 0
    assert run(["extract", str(root / "data"), str(root / "ex")]) == 0
    return root


# -- extract -----------------------------------------------------------------


def test_extract_outputs(extracted):
    dets = sorted((extracted / "ex" / "detections").glob("*.json"))
    assert len(dets) == 4
    manifest = json.loads((extracted / "ex" / "manifest.json").read_text())
    assert manifest
    assert list((extracted / "ex" / "masks").rglob("*.png"))


def test_extract_rerun_is_byte_identical(extracted):
    before = (extracted / "ex" / "manifest.json").read_bytes()
    assert run(["extract", str(extracted / "data"), str(extracted / "ex")]) == 0
    assert (extracted / "ex" / "manifest.json").read_bytes() == before


def test_extract_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert run(["extract", str(tmp_path / "empty"), str(tmp_path / "out")]) == EXIT_DATA
    assert "no frame-directory videos" in capsys.readouterr().err


# -- train -------------------------------------------------------------------


def losses(run_dir):
    lines = [json.loads(x) for x in (run_dir / "train_log.jsonl").read_text().splitlines()]
    return [x["loss"] for x in lines if "loss" in x]


def test_train_smoke_and_determinism(extracted):
    m = extracted / "ex" / "manifest.json"
    assert run(train_args(m, extracted / "run_a")) == 0
    assert (extracted / "run_a" / "best.pt").exists()
    assert run(train_args(m, extracted / "run_b")) == 0
    assert losses(extracted / "run_a") == losses(extracted / "run_b")
    assert len(losses(extracted / "run_a")) == 4


def test_train_missing_manifest(tmp_path):
    assert run(train_args(tmp_path / "nope.json", tmp_path / "run")) == EXIT_DATA


def test_train_diverging_lr_is_numeric_failure(extracted, capsys):
    args = train_args(extracted / "ex" / "manifest.json", extracted / "run_nan", steps=20)
    assert run(args + ["--training.base_lr", "1e30", "--training.label_smoothing_eps", "0"]) == EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


# -- predict -----------------------------------------------------------------


def test_predict_on_videos(extracted, tmp_path):
    ckpt = extracted / "run_a" / "best.pt"
    if not ckpt.exists():
        assert run(train_args(extracted / "ex" / "manifest.json", extracted / "run_a")) == 0
    # folder 1 holds one real video and its fake
    assert run(["predict", str(extracted / "data"), "--checkpoint", str(ckpt), "--out", str(tmp_path),
                "--folders", "1"]) == 0
    lines = (tmp_path / "predictions.csv").read_text().splitlines()
    assert lines[0] == "filename,label" and len(lines) == 3
    for line in lines[1:]:
        value = line.split(",")[1]
        assert len(value.split(".")[1]) == 6 and 0 <= float(value) <= 1
    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report) == {"aggregation", "checkpoint", "videos"}
    assert report["aggregation"]["low_conf"] == 0.6


def flat_model(tmp_path):
    torch.manual_seed(0)
    model = EfficientNetClassifier(build_variant("B0", width_budget=0.1, resolution=32))
    with torch.no_grad():
        model.classifier.weight.zero_()
        model.classifier.bias.zero_()
    save_checkpoint(model, tmp_path / "flat.pt")
    return model


def test_predict_fallback_when_every_frame_is_uncertain(tmp_path):
    flat_model(tmp_path)
    rng = np.random.default_rng(0)
    for f in range(3):
        write_png(tmp_path / "crops" / "vid" / f"{f}_0.png", rng.integers(0, 256, (40, 40, 3), dtype=np.uint8))
    assert run(["predict", str(tmp_path), "--checkpoint", str(tmp_path / "flat.pt"), "--out",
                str(tmp_path / "pred")]) == 0
    video = json.loads((tmp_path / "pred" / "report.json").read_text())["videos"]["vid"]
    assert video["fallback_used"] is True and video["frames_discarded"] == 3
    assert video["p_fake"] == pytest.approx(0.5)


def test_predict_corrupt_checkpoint(tmp_path, capsys):
    flat_model(tmp_path)
    blob = torch.load(tmp_path / "flat.pt", weights_only=True)
    blob["state"]["classifier.weight"] = torch.zeros(1, 3)
    torch.save(blob, tmp_path / "bad.pt")
    write_png(tmp_path / "crops" / "vid" / "0_0.png", np.zeros((8, 8, 3), np.uint8))
    assert run(["predict", str(tmp_path), "--checkpoint", str(tmp_path / "bad.pt"), "--out",
                str(tmp_path / "pred")]) == EXIT_DATA
    assert "shape mismatch" in capsys.readouterr().err


# -- evaluate ----------------------------------------------------------------


def write_csv(path, rows):
    path.write_text("filename,label\n" + "".join(f"{k},{v}\n" for k, v in rows))
    return path


def test_evaluate_confident_and_flat(tmp_path):
    labels = write_csv(tmp_path / "labels.csv", [("a", 1), ("b", 0), ("c", 1), ("d", 0)])
    sure = write_csv(tmp_path / "sure.csv", [("a", "1.000000"), ("b", "0.000000"), ("c", "1.000000"),
                                              ("d", "0.000000")])
    assert run(["evaluate", str(sure), str(labels), "--out", str(tmp_path / "sure.json")]) == 0
    assert json.loads((tmp_path / "sure.json").read_text())["logloss"] <= 1e-14
    flat = write_csv(tmp_path / "flat.csv", [(k, "0.500000") for k in "abcd"])
    assert run(["evaluate", str(flat), str(labels), "--out", str(tmp_path / "flat.json")]) == 0
    assert abs(json.loads((tmp_path / "flat.json").read_text())["logloss"] - math.log(2)) <= 1e-12
    assert round(math.log(2), 6) == 0.693147


def test_evaluate_fixture_files(tmp_path):
    fx = Path(__file__).parent / "fixtures"
    case = json.loads((fx / "metrics_case.json").read_text())["expected"]
    assert run(["evaluate", str(fx / "predictions.csv"), str(fx / "labels.csv"), "--out",
                str(tmp_path / "r.json")]) == 0
    got = json.loads((tmp_path / "r.json").read_text())
    for key in ("precision", "recall", "f1", "auc"):
        assert got[key] == case[key]
    assert abs(got["logloss"] - case["logloss"]) <= 1e-15
    table = (tmp_path / "r.txt").read_text()
    assert "This run" in table and "Proposed MTCNN-EfficientNetB5" in table


# -- exit codes --------------------------------------------------------------


def test_config_errors(extracted, tmp_path, capsys):
    assert run(["evaluate", str(tmp_path / "p.csv")]) == EXIT_CONFIG
    m = extracted / "ex" / "manifest.json"
    assert run(train_args(m, tmp_path / "run") + ["--training.momentum", "2"]) == EXIT_CONFIG
    (tmp_path / "c.yaml").write_text("training:\n  warmup: 3\n")
    assert run(["synth", str(tmp_path / "s"), "--config", str(tmp_path / "c.yaml")]) == EXIT_CONFIG
    assert run(["synth", str(tmp_path / "s"), "--training.total_steps", "lots"]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
