from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from pdat_common.errors import ShapeError

NUM_STAGES = 4


def _groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class Stage(nn.Module):
    """Stride-2 conv3x3 -> GN -> ReLU -> conv3x3 -> GN -> ReLU."""

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1, bias=False),
            nn.GroupNorm(_groups(out_channels), out_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, stride=1, padding=1, bias=False),
            nn.GroupNorm(_groups(out_channels), out_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


class Backbone(nn.Module):
    """Four-stage feature extractor; stage ``m`` halves the spatial side of stage ``m-1``.

    GroupNorm keeps per-sample features independent of batch composition, so
    train and eval modes compute the same function.
    """

    def __init__(self, widths: tuple[int, ...] = (16, 32, 64, 128), in_channels: int = 3) -> None:
        super().__init__()
        if len(widths) != NUM_STAGES:
            raise ShapeError(f"backbone needs {NUM_STAGES} stage widths, got {len(widths)}")
        chans = (in_channels, *widths)
        self.widths = tuple(int(w) for w in widths)
        self.in_channels = in_channels
        self.stages = nn.ModuleList(Stage(chans[i], chans[i + 1]) for i in range(NUM_STAGES))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = []
        for stage in self.stages:
            x = stage(x)
            out.append(x)
        return out


@dataclass
class FeaturePyramid:
    """Per-stage maps, each (B, C_m, H_m, W_m); ``stages[0]`` is stage 1."""

    stages: list[torch.Tensor]
    kind: str
    domain: str | None = None

    def stage(self, m: int) -> torch.Tensor:
        return self.stages[m - 1]

    def detach(self) -> "FeaturePyramid":
        return FeaturePyramid([s.detach() for s in self.stages], self.kind, self.domain)


def as_batch(patch: torch.Tensor | np.ndarray) -> torch.Tensor:
    """Accept (H, W, C) uint8 arrays or (C, H, W) / (B, C, H, W) tensors."""
    if isinstance(patch, np.ndarray):
        arr = patch.astype(np.float32)
        if patch.dtype == np.uint8:
            arr = arr / 255.0
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]
    if patch.dim() == 3:
        return patch[None]
    return patch


def extract_pyramid(
    patch: torch.Tensor | np.ndarray,
    backbone: Backbone,
    *,
    kind: str = "search",
    domain: str | None = None,
) -> FeaturePyramid:
    x = as_batch(patch)
    h, w = x.shape[-2:]
    if h % 16 or w % 16:
        raise ShapeError(f"patch side must be divisible by 16, got {h}x{w}", details={"shape": [h, w]})
    if x.shape[1] != backbone.in_channels:
        raise ShapeError(
            f"patch has {x.shape[1]} channels, backbone expects {backbone.in_channels}",
            details={"channels": int(x.shape[1])},
        )
    return FeaturePyramid(backbone(x), kind=kind, domain=domain)
