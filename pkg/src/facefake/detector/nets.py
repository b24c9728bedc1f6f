"""Small trainable convolutional stage scorers (12, 24 and 48 px inputs).

The three networks follow the classic proposal / refinement / output layout:
a face probability head and a four-value box regression head each, plus a
ten-value landmark head on the output network. They are trained here on
procedurally rendered faces, so no external weights are involved.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..core import DataError
from ..synth import _background, _render_face
from .cascade import STAGE_SIZES, StageOutput, crop_patches
from .geometry import iou_one_to_many

FORMAT = "facefake-detector/1"

# keypoints relative to the ellipse centre, in units of its semi-axes;
# eyes, nose, mouth corners as drawn by the synthetic renderer
_KEYPOINTS = np.array([[-0.38, -0.22], [0.38, -0.22], [0.0, 0.12], [-0.3, 0.45], [0.3, 0.45]])


class PNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 10, 3), nn.PReLU(10), nn.MaxPool2d(2, 2, ceil_mode=True),
            nn.Conv2d(10, 16, 3), nn.PReLU(16),
            nn.Conv2d(16, 32, 3), nn.PReLU(32),
        )
        self.cls = nn.Conv2d(32, 1, 1)
        self.box = nn.Conv2d(32, 4, 1)

    def forward(self, x):
        h = self.body(x)
        return self.cls(h).flatten(1), self.box(h).flatten(1), None


class RNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 28, 3), nn.PReLU(28), nn.MaxPool2d(3, 2, ceil_mode=True),
            nn.Conv2d(28, 48, 3), nn.PReLU(48), nn.MaxPool2d(3, 2, ceil_mode=True),
            nn.Conv2d(48, 64, 2), nn.PReLU(64),
            nn.Flatten(), nn.Linear(64 * 3 * 3, 128), nn.PReLU(128),
        )
        self.cls = nn.Linear(128, 1)
        self.box = nn.Linear(128, 4)

    def forward(self, x):
        h = self.body(x)
        return self.cls(h), self.box(h), None


class ONet(nn.Module):
    def __init__(self):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 32, 3), nn.PReLU(32), nn.MaxPool2d(3, 2, ceil_mode=True),
            nn.Conv2d(32, 64, 3), nn.PReLU(64), nn.MaxPool2d(3, 2, ceil_mode=True),
            nn.Conv2d(64, 64, 3), nn.PReLU(64), nn.MaxPool2d(2, 2, ceil_mode=True),
            nn.Conv2d(64, 128, 2), nn.PReLU(128),
            nn.Flatten(), nn.Linear(128 * 3 * 3, 256), nn.PReLU(256),
        )
        self.cls = nn.Linear(256, 1)
        self.box = nn.Linear(256, 4)
        self.lms = nn.Linear(256, 10)

    def forward(self, x):
        h = self.body(x)
        return self.cls(h), self.box(h), self.lms(h)


NETS = (PNet, RNet, ONet)


def _to_input(patches: np.ndarray) -> torch.Tensor:
    x = torch.from_numpy(np.ascontiguousarray(patches, dtype=np.float32)).permute(0, 3, 1, 2)
    return (x - 0.5) / 0.5


@dataclass
class CNNScorer:
    """StageScorer backed by one of the networks above (evaluation mode, no grad)."""

    net: nn.Module
    batch_size: int = 2048

    def __post_init__(self):
        self.net.eval()

    @torch.no_grad()
    def __call__(self, patches: np.ndarray) -> StageOutput:
        ps, boxes, lms = [], [], []
        for i in range(0, max(len(patches), 1), self.batch_size):
            chunk = patches[i:i + self.batch_size]
            if not len(chunk):
                break
            logit, box, lm = self.net(_to_input(chunk))
            ps.append(torch.sigmoid(logit).reshape(-1).double().numpy())
            boxes.append(box.double().numpy())
            if lm is not None:
                lms.append(lm.double().numpy().reshape(-1, 5, 2))
        if not ps:
            return StageOutput(np.zeros(0), np.zeros((0, 4)),
                               np.zeros((0, 5, 2)) if isinstance(self.net, ONet) else None)
        return StageOutput(np.concatenate(ps), np.concatenate(boxes),
                           np.concatenate(lms) if lms else None)


# ---------------------------------------------------------------------------
# training data


@dataclass
class FaceScene:
    image: np.ndarray        # (H, W, 3) float [0, 1]
    box: np.ndarray          # (4,) face box
    landmarks: np.ndarray    # (5, 2)


def render_scene(rng: np.random.Generator, height: int = 120, width: int = 160) -> FaceScene:
    """One frame with a single synthetic face of random size and position."""
    bg = _background(rng, height, width)
    ax = rng.uniform(8, 34)
    ay = ax * rng.uniform(1.1, 1.35)
    cx = rng.uniform(ax * 0.6, width - ax * 0.6)
    cy = rng.uniform(ay * 0.6, height - ay * 0.6)
    skin = rng.uniform(160, 240, size=3).astype(np.float32)
    texture = rng.normal(0, 12, (2 * height, 2 * width, 3)).astype(np.float32)
    img = _render_face(bg, cx, cy, ax, ay, skin, texture)
    if rng.random() < 0.5:
        # a blurred inner region, so the detector also sees manipulated faces
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
        r = np.sqrt(((xx - cx) / (0.84 * ax)) ** 2 + ((yy - cy) / (0.86 * ay)) ** 2)
        inner = np.clip((1.0 - r) * 8, 0, 1)[..., None]
        img = img * (1 - inner) + cv2.GaussianBlur(img, (0, 0), rng.uniform(1, 3)) * inner
    img = img + rng.normal(0, 2.0, img.shape)
    img = np.clip(img, 0, 255).astype(np.float32) / 255.0
    box = np.array([cx - ax, cy - ay, cx + ax, cy + ay])
    lms = np.column_stack([cx + _KEYPOINTS[:, 0] * ax, cy + _KEYPOINTS[:, 1] * ay])
    return FaceScene(img, box, lms)


def _windows(rng: np.random.Generator, scene: FaceScene, n: int) -> np.ndarray:
    """Square windows: half jittered around the face, half anywhere in the frame."""
    h, w = scene.image.shape[:2]
    x1, y1, x2, y2 = scene.box
    side = max(x2 - x1, y2 - y1)
    cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
    k = n // 2
    s = side * rng.uniform(0.75, 1.3, k)
    ox = cx + rng.uniform(-0.3, 0.3, k) * side - s / 2
    oy = cy + rng.uniform(-0.3, 0.3, k) * side - s / 2
    near = np.column_stack([ox, oy, ox + s, oy + s])
    s = rng.uniform(12, min(h, w), n - k)
    ox = rng.uniform(0, w - s)
    oy = rng.uniform(0, h - s)
    far = np.column_stack([ox, oy, ox + s, oy + s])
    return np.concatenate([near, far])


def stage_samples(rng: np.random.Generator, stage: int, n_scenes: int, per_scene: int = 16):
    """Patches and targets for one stage.

    Returns (patches, kind, box targets, landmark targets) where kind is
    1 for positives (IoU >= 0.65), 0 for negatives (IoU < 0.3) and -1 for
    part faces (used for box regression only).
    """
    size = STAGE_SIZES[stage]
    patches, kinds, boxes, lms = [], [], [], []
    for _ in range(n_scenes):
        scene = render_scene(rng)
        win = _windows(rng, scene, per_scene)
        ov = iou_one_to_many(scene.box, win, "UNION")
        kind = np.where(ov >= 0.65, 1, np.where(ov < 0.3, 0, np.where(ov >= 0.4, -1, -2)))
        keep = kind > -2
        win, kind = win[keep], kind[keep]
        ww = (win[:, 2] - win[:, 0])[:, None]
        wh = (win[:, 3] - win[:, 1])[:, None]
        off = np.column_stack([(scene.box[0] - win[:, 0]) / ww[:, 0], (scene.box[1] - win[:, 1]) / wh[:, 0],
                               (scene.box[2] - win[:, 2]) / ww[:, 0], (scene.box[3] - win[:, 3]) / wh[:, 0]])
        lm = np.stack([(scene.landmarks[None, :, 0] - win[:, 0:1]) / ww,
                       (scene.landmarks[None, :, 1] - win[:, 1:2]) / wh], axis=2)
        patches.append(crop_patches(scene.image, win, size))
        kinds.append(kind)
        boxes.append(off)
        lms.append(lm.reshape(-1, 10))
    return (np.concatenate(patches), np.concatenate(kinds), np.concatenate(boxes).astype(np.float32),
            np.concatenate(lms).astype(np.float32))


def train_stage_nets(steps: int = 600, seed: int = 0, batch_size: int = 64,
                     n_scenes: int = 400, lr: float = 1e-3) -> tuple[tuple[nn.Module, ...], list[float]]:
    """Train all three networks with Adam; returns the nets and each one's final mean loss."""
    torch.manual_seed(seed)
    nets, finals = [], []
    for stage, cls in enumerate(NETS):
        rng = np.random.default_rng([seed, stage])
        x, kind, box_t, lm_t = stage_samples(rng, stage, n_scenes)
        net = cls()
        opt = torch.optim.Adam(net.parameters(), lr=lr)
        xt, kt = _to_input(x), torch.from_numpy(kind)
        bt, lt = torch.from_numpy(box_t), torch.from_numpy(lm_t)
        recent = []
        for step in range(steps):
            idx = torch.from_numpy(rng.integers(0, len(x), batch_size))
            logit, box, lm = net(xt[idx])
            k = kt[idx]
            labelled = k >= 0
            loss = F.binary_cross_entropy_with_logits(logit[labelled, 0], k[labelled].float())
            regress = k != 0
            if regress.any():
                loss = loss + 0.5 * F.mse_loss(box[regress], bt[idx][regress])
            pos = k == 1
            if lm is not None and pos.any():
                loss = loss + 0.5 * F.mse_loss(lm[pos], lt[idx][pos])
            opt.zero_grad()
            loss.backward()
            opt.step()
            recent.append(loss.item())
        net.eval()
        nets.append(net)
        finals.append(float(np.mean(recent[-50:])))
    return tuple(nets), finals


# ---------------------------------------------------------------------------
# persistence


def save_scorers(nets: Sequence[nn.Module], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"format": FORMAT, "nets": [n.state_dict() for n in nets]}, path)


def load_nets(path: str | Path) -> tuple[nn.Module, ...]:
    try:
        doc = torch.load(Path(path), map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DataError(f"{path}: unreadable detector weights ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT or len(doc.get("nets", ())) != 3:
        raise DataError(f"{path}: not a {FORMAT} file")
    nets = []
    for cls, state in zip(NETS, doc["nets"]):
        net = cls()
        try:
            net.load_state_dict(state)
        except RuntimeError as exc:
            raise DataError(f"{path}: {exc}") from exc
        nets.append(net.eval())
    return tuple(nets)


def load_scorers(path: str | Path) -> tuple[CNNScorer, CNNScorer, CNNScorer]:
    return tuple(CNNScorer(n) for n in load_nets(path))
