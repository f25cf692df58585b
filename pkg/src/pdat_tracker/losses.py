"""Tracking loss (classification, IoU regression, centerness) and the LossBundle record."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import torch
import torch.nn.functional as F

from pdat_tracker.heads import HeadOutput, grid_points


@dataclass
class LossBundle:
    cls: torch.Tensor
    reg: torch.Tensor
    cen: torch.Tensor
    lambdas: tuple[float, float, float] = (1.0, 3.0, 1.0)
    adv_G: torch.Tensor | float = 0.0
    adv_D: torch.Tensor | float = 0.0
    sub: torch.Tensor | float = 0.0
    flags: dict[str, Any] = field(default_factory=dict)

    @property
    def total(self) -> torch.Tensor:
        l1, l2, l3 = self.lambdas
        return l1 * self.cls + l2 * self.reg + l3 * self.cen

    def as_metrics(self) -> dict[str, float]:
        def f(v: torch.Tensor | float) -> float:
            return float(v.detach().item()) if isinstance(v, torch.Tensor) else float(v)

        return {
            "cls": f(self.cls),
            "reg": f(self.reg),
            "cen": f(self.cen),
            "adv_G": f(self.adv_G),
            "adv_D": f(self.adv_D),
            "sub": f(self.sub),
        }


@dataclass
class Targets:
    """Per-cell targets on the (B, n, n) response grid."""

    positive: torch.Tensor
    ltrb: torch.Tensor
    centerness: torch.Tensor


def build_targets(gt_boxes: torch.Tensor, n: int, stride: int, search_size: int) -> Targets:
    """Cells whose grid point lies strictly inside the (cx, cy, w, h) box are positive."""
    p = grid_points(n, stride, search_size, device=gt_boxes.device, dtype=gt_boxes.dtype)
    py, px = torch.meshgrid(p, p, indexing="ij")
    cx, cy, w, h = (gt_boxes[:, i].view(-1, 1, 1) for i in range(4))
    left = px - (cx - w / 2)
    top = py - (cy - h / 2)
    right = (cx + w / 2) - px
    bottom = (cy + h / 2) - py
    ltrb = torch.stack([left, top, right, bottom], dim=1)
    positive = ltrb.min(dim=1).values > 0

    lr = torch.stack([left, right]).clamp_min(1e-12)
    tb = torch.stack([top, bottom]).clamp_min(1e-12)
    cen = torch.sqrt((lr.min(0).values / lr.max(0).values) * (tb.min(0).values / tb.max(0).values))
    cen = torch.where(positive, cen, torch.zeros_like(cen))
    return Targets(positive=positive, ltrb=ltrb, centerness=cen)


def iou_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """``-log((inter + 1) / (union + 1))`` for (N, 4) l, t, r, b distances."""
    pl, pt, pr, pb = pred.unbind(1)
    tl, tt, tr, tb = target.unbind(1)
    area_p = (pl + pr) * (pt + pb)
    area_t = (tl + tr) * (tt + tb)
    w_int = torch.minimum(pl, tl) + torch.minimum(pr, tr)
    h_int = torch.minimum(pt, tt) + torch.minimum(pb, tb)
    inter = w_int * h_int
    union = area_p + area_t - inter
    return -torch.log((inter + 1.0) / (union + 1.0))


def _binary_entropy(t: torch.Tensor) -> torch.Tensor:
    return -(torch.special.xlogy(t, t) + torch.special.xlogy(1 - t, 1 - t))


def tracking_loss(
    pred: HeadOutput,
    gt_boxes: torch.Tensor,
    *,
    lambdas: tuple[float, float, float] = (1.0, 3.0, 1.0),
    stride: int = 16,
    search_size: int = 192,
) -> LossBundle:
    """Classification BCE over all cells; IoU and centerness losses over positive cells.

    Centerness uses cross-entropy minus the target's entropy, so a prediction
    equal to the target scores 0. With no positive cell the regression and
    centerness terms are 0 and ``flags["no_positive"]`` is set.
    """
    n = pred.size
    tg = build_targets(gt_boxes.to(pred.cls.dtype), n, stride, search_size)
    cls_logits = pred.cls[:, 0]
    cls = F.binary_cross_entropy_with_logits(cls_logits, tg.positive.to(cls_logits.dtype))

    flags: dict[str, Any] = {"positives": int(tg.positive.sum().item())}
    if flags["positives"] == 0:
        flags["no_positive"] = True
        zero = (pred.reg.sum() + pred.cen.sum()) * 0.0
        return LossBundle(cls=cls, reg=zero, cen=zero.clone(), lambdas=lambdas, flags=flags)

    pos = tg.positive
    reg_pred = pred.reg.permute(0, 2, 3, 1)[pos]
    reg_tgt = tg.ltrb.permute(0, 2, 3, 1)[pos]
    reg = iou_loss(reg_pred, reg_tgt).mean()

    cen_logits = pred.cen[:, 0][pos]
    cen_tgt = tg.centerness[pos]
    cen_ce = F.binary_cross_entropy_with_logits(cen_logits, cen_tgt, reduction="none")
    cen = (cen_ce - _binary_entropy(cen_tgt)).mean().clamp_min(0.0)

    return LossBundle(cls=cls, reg=reg, cen=cen, lambdas=lambdas, flags=flags)
