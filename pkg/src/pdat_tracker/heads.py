from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from pdat_common.errors import ShapeError

# keeps decoded distances strictly positive when softplus underflows
REG_EPS = 1e-3


def correlate(z: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Depthwise valid cross-correlation of ``z`` over ``x``.

    Accepts (B, C, h, w) / (B, C, H, W) or unbatched (C, h, w) / (C, H, W);
    returns (B, C, H - h + 1, W - w + 1).
    """
    unbatched = z.dim() == 3
    if unbatched:
        z, x = z[None], x[None]
    if z.dim() != 4 or x.dim() != 4:
        raise ShapeError("correlate expects 3-D or 4-D feature maps")
    if z.shape[:2] != x.shape[:2]:
        raise ShapeError(
            f"channel/batch mismatch: template {tuple(z.shape)} vs search {tuple(x.shape)}",
            details={"z": list(z.shape), "x": list(x.shape)},
        )
    if z.shape[-1] > x.shape[-1] or z.shape[-2] > x.shape[-2]:
        raise ShapeError("template map larger than search map", details={"z": list(z.shape), "x": list(x.shape)})

    b, c = x.shape[:2]
    out = F.conv2d(x.reshape(1, b * c, *x.shape[-2:]), z.reshape(b * c, 1, *z.shape[-2:]), groups=b * c)
    out = out.reshape(b, c, *out.shape[-2:])
    return out[0] if unbatched else out


@dataclass
class HeadOutput:
    """cls and cen are logits (B, 1, n, n); reg is (B, 4, n, n) l, t, r, b in search pixels."""

    cls: torch.Tensor
    reg: torch.Tensor
    cen: torch.Tensor

    @property
    def size(self) -> int:
        return int(self.cls.shape[-1])


def _tower(channels: int, depth: int = 2) -> nn.Sequential:
    layers: list[nn.Module] = []
    for _ in range(depth):
        layers += [
            nn.Conv2d(channels, channels, 3, padding=1, bias=False),
            nn.GroupNorm(8 if channels % 8 == 0 else 1, channels),
            nn.ReLU(inplace=True),
        ]
    return nn.Sequential(*layers)


class Heads(nn.Module):
    def __init__(self, in_channels: int, width: int = 64, stride: int = 16) -> None:
        super().__init__()
        self.stride = stride
        self.adjust = nn.Conv2d(in_channels, width, 1)
        self.cls_tower = _tower(width)
        self.reg_tower = _tower(width)
        self.cls = nn.Conv2d(width, 1, 3, padding=1)
        self.cen = nn.Conv2d(width, 1, 3, padding=1)
        self.reg = nn.Conv2d(width, 4, 3, padding=1)

    def forward(self, response: torch.Tensor) -> HeadOutput:
        h = self.adjust(response)
        c = self.cls_tower(h)
        r = self.reg_tower(h)
        reg = F.softplus(self.reg(r)) * self.stride + REG_EPS
        return HeadOutput(cls=self.cls(c), reg=reg, cen=self.cen(c))


def forward_heads(response: torch.Tensor, heads: Heads) -> HeadOutput:
    if response.numel() == 0:
        raise ShapeError("empty response map")
    return heads(response)


def grid_points(n: int, stride: int, search_size: int, *, device=None, dtype=torch.float32) -> torch.Tensor:
    """Search-patch coordinate of each response cell: ``S/2 + (j - (n-1)/2) * stride``."""
    j = torch.arange(n, device=device, dtype=dtype)
    return search_size / 2.0 + (j - (n - 1) / 2.0) * stride
