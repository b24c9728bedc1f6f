"""MBConv backbone with a single-logit fake-probability head."""

from __future__ import annotations

import torch
from torch import nn

from .scaling import BackboneConfig, BlockPlan, block_plans


class ResolutionError(ValueError):
    pass


def conv_bn(c_in: int, c_out: int, kernel: int, stride: int = 1, groups: int = 1,
            act: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = [
        nn.Conv2d(c_in, c_out, kernel, stride, kernel // 2, groups=groups, bias=False),
        nn.BatchNorm2d(c_out),
    ]
    if act:
        layers.append(nn.SiLU())
    return nn.Sequential(*layers)


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, squeezed: int):
        super().__init__()
        self.reduce = nn.Conv2d(channels, squeezed, 1)
        self.expand = nn.Conv2d(squeezed, channels, 1)
        self.act = nn.SiLU()

    def forward(self, x):
        s = x.mean(dim=(2, 3), keepdim=True)
        return x * torch.sigmoid(self.expand(self.act(self.reduce(s))))


def drop_connect(x: torch.Tensor, rate: float, training: bool) -> torch.Tensor:
    """Per-sample stochastic depth on the residual branch."""
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = torch.rand(x.shape[0], 1, 1, 1, dtype=x.dtype, device=x.device) < keep
    return x * mask.to(x.dtype) / keep


class MBConv(nn.Module):
    def __init__(self, plan: BlockPlan, drop_rate: float = 0.0):
        super().__init__()
        self.plan = plan
        self.use_residual = plan.residual
        self.drop_rate = drop_rate
        self.expand = (conv_bn(plan.in_channels, plan.expanded, 1)
                       if plan.expanded != plan.in_channels else nn.Identity())
        self.depthwise = conv_bn(plan.expanded, plan.expanded, plan.kernel, plan.stride,
                                 groups=plan.expanded)
        self.se = SqueezeExcite(plan.expanded, plan.squeezed)
        self.project = conv_bn(plan.expanded, plan.out_channels, 1, act=False)

    def forward(self, x):
        y = self.project(self.se(self.depthwise(self.expand(x))))
        if self.use_residual:
            y = x + drop_connect(y, self.drop_rate, self.training)
        return y


class EfficientNetClassifier(nn.Module):
    def __init__(self, cfg: BackboneConfig, in_channels: int = 3):
        super().__init__()
        self.cfg = cfg
        self.stem = conv_bn(in_channels, cfg.stem_channels, 3, 2)
        plans = block_plans(cfg)
        n = len(plans)
        self.blocks = nn.ModuleList(
            MBConv(p, cfg.drop_connect * i / n) for i, p in enumerate(plans))
        self.head = conv_bn(plans[-1].out_channels, cfg.head_channels, 1)
        self.dropout = nn.Dropout(cfg.dropout)
        self.classifier = nn.Linear(cfg.head_channels, 1)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        r = self.cfg.input_resolution
        if x.dim() != 4 or x.shape[-2:] != (r, r):
            raise ResolutionError(f"expected input (N, C, {r}, {r}), got {tuple(x.shape)}")
        x = self.stem(x)
        for block in self.blocks:
            x = block(x)
        x = self.head(x).mean(dim=(2, 3))
        return self.classifier(self.dropout(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Fake probability, shape (N, 1), kept strictly inside (0, 1)."""
        eps = torch.finfo(x.dtype).eps
        return torch.sigmoid(self.logits(x)).clamp(eps, 1 - eps)


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
