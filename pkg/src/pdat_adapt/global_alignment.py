"""Adversarial global alignment: gradient reversal, per-stage style discriminators,
least-squares generator/discriminator losses.

Domain labels: source ``0``, target ``1``.
"""

from __future__ import annotations

from typing import Mapping

import torch
import torch.nn.functional as F
from torch import nn

from pdat_common.errors import ConfigError, DataError, ShapeError
from pdat_config.run_config import AgdaConfig

SOURCE_LABEL = 0.0
TARGET_LABEL = 1.0


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x: torch.Tensor, coefficient: float) -> torch.Tensor:
        ctx.coefficient = coefficient
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor):
        return grad_output.neg() * ctx.coefficient, None


def grl(x: torch.Tensor, coefficient: float = 1.0) -> torch.Tensor:
    """Identity forward; backward multiplies the incoming gradient by ``-coefficient``."""
    if coefficient < 0:
        raise ConfigError(f"GRL coefficient must be >= 0, got {coefficient}", details={"key": "agda.grl_coefficient"})
    return _GradReverse.apply(x, float(coefficient))


class StyleDiscriminator(nn.Module):
    """GRL -> tokens -> Linear(C, d_model) -> TransformerEncoder -> mean-pool -> Linear(d_model, 1).

    No positional encoding, so the score is invariant to permutations of the
    spatial positions. Maps larger than ``token_grid`` per side are average
    pooled down to it first.
    """

    def __init__(
        self,
        in_channels: int,
        *,
        d_model: int = 64,
        n_heads: int = 4,
        ff_width: int = 128,
        layers: int = 2,
        token_grid: int = 8,
        dropout: float = 0.0,
    ) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.token_grid = token_grid
        self.project = nn.Linear(in_channels, d_model)
        layer = nn.TransformerEncoderLayer(
            d_model=d_model,
            nhead=n_heads,
            dim_feedforward=ff_width,
            dropout=dropout,
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=layers, enable_nested_tensor=False)
        self.readout = nn.Linear(d_model, 1)

    def tokens(self, feat: torch.Tensor) -> torch.Tensor:
        if feat.dim() != 4:
            raise ShapeError(f"expected (B, C, H, W) features, got {tuple(feat.shape)}")
        if feat.shape[1] != self.in_channels:
            raise ShapeError(
                f"discriminator expects {self.in_channels} channels, got {feat.shape[1]}",
                details={"channels": int(feat.shape[1])},
            )
        h, w = feat.shape[-2:]
        if h * w == 0:
            raise ShapeError("feature map has no spatial positions")
        g = self.token_grid
        if g > 0 and (h > g or w > g):
            feat = F.adaptive_avg_pool2d(feat, (min(h, g), min(w, g)))
        return feat.flatten(2).transpose(1, 2)

    def forward(self, feat: torch.Tensor, coefficient: float = 1.0) -> torch.Tensor:
        t = self.tokens(grl(feat, coefficient))
        h = self.encoder(self.project(t))
        return self.readout(h.mean(dim=1)).squeeze(-1)


def discriminate(feat: torch.Tensor, disc: StyleDiscriminator, coefficient: float = 1.0) -> torch.Tensor:
    """One score per sample."""
    return disc(feat, coefficient)


def build_discriminators(widths: tuple[int, ...], agda: AgdaConfig) -> nn.ModuleDict:
    """One independent discriminator per participating stage, keyed ``"1"`` .. ``"4"``."""
    return nn.ModuleDict(
        {
            str(m): StyleDiscriminator(
                widths[m - 1],
                d_model=agda.d_model,
                n_heads=agda.n_heads,
                ff_width=agda.ff_width,
                layers=agda.layers,
                token_grid=agda.token_grid,
                dropout=agda.dropout,
            )
            for m in sorted(agda.stages)
        }
    )


def adv_loss_G(d_xt: torch.Tensor, d_zt: torch.Tensor) -> torch.Tensor:
    """Generator loss on target features: mean of ``(d_xt - l_s)^2 + (d_zt - l_s)^2``."""
    return ((d_xt - SOURCE_LABEL) ** 2 + (d_zt - SOURCE_LABEL) ** 2).mean()


def adv_loss_D(scores_by_domain: Mapping[str, tuple[torch.Tensor, torch.Tensor]]) -> torch.Tensor:
    """Discriminator loss: per-domain batch mean of ``(d_x - l_d)^2 + (d_z - l_d)^2``, summed over domains."""
    missing = [d for d in ("source", "target") if d not in scores_by_domain]
    if missing:
        raise DataError(f"adv_loss_D needs both domains, missing {', '.join(missing)}")
    total = None
    for domain, label in (("source", SOURCE_LABEL), ("target", TARGET_LABEL)):
        d_x, d_z = scores_by_domain[domain]
        term = ((d_x - label) ** 2 + (d_z - label) ** 2).mean()
        total = term if total is None else total + term
    return total


def grl_coefficient(agda: AgdaConfig, iteration: int, max_iter: int) -> float:
    """Constant coefficient, optionally ramped linearly over the first ``grl_warmup`` fraction."""
    if agda.grl_warmup <= 0 or max_iter <= 0:
        return agda.grl_coefficient
    ramp = agda.grl_warmup * max_iter
    return agda.grl_coefficient * min(1.0, iteration / ramp)
