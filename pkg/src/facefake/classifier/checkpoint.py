"""Self-describing checkpoints: backbone config as JSON plus named tensors."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional

import torch

from ..core import DataError
from .model import EfficientNetClassifier
from .scaling import BackboneConfig

FORMAT = "facefake-checkpoint/1"


class CheckpointError(DataError):
    pass


def save_checkpoint(model: EfficientNetClassifier, path: str | Path,
                    extra: Optional[dict[str, Any]] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": FORMAT,
        "config": json.dumps(model.cfg.to_dict(), sort_keys=True),
        "extra": json.dumps(extra or {}, sort_keys=True),
        "state": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
    }, path)


def load_checkpoint(path: str | Path) -> tuple[EfficientNetClassifier, dict[str, Any]]:
    """Rebuild the model from its stored config, checking every tensor shape before loading."""
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(blob, dict) or blob.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} archive")
    try:
        cfg = BackboneConfig.from_dict(json.loads(blob["config"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad backbone config ({exc})") from exc
    model = EfficientNetClassifier(cfg)
    expected = model.state_dict()
    state = blob["state"]
    missing = sorted(set(expected) - set(state))
    unexpected = sorted(set(state) - set(expected))
    if missing or unexpected:
        raise CheckpointError(f"{path}: tensor names disagree with config "
                              f"(missing {missing[:3]}, unexpected {unexpected[:3]})")
    bad = [(k, tuple(state[k].shape), tuple(v.shape)) for k, v in expected.items()
           if tuple(state[k].shape) != tuple(v.shape)]
    if bad:
        k, got, want = bad[0]
        raise CheckpointError(f"{path}: shape mismatch for {k}: stored {got}, config implies {want} "
                              f"({len(bad)} tensors disagree)")
    model.load_state_dict(state)
    model.eval()
    return model, json.loads(blob.get("extra", "{}"))
