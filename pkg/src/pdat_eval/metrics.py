"""One-pass tracking metrics.

Boxes are ``(x, y, w, h)``. Conventions:

- success: fraction of frames with ``IoU > t`` for ``t`` in ``np.arange(51) / 50``
- precision: fraction of frames with center error ``<= t`` px, ``t`` in 0..50
- normalized precision: center error divided per axis by the gt width/height,
  fraction ``<= t`` for ``t`` in ``np.arange(51) / 100``

Every AUC is the plain mean of its curve samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUCCESS_THRESHOLDS = np.arange(51) / 50
PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64)
NORM_PRECISION_THRESHOLDS = np.arange(51) / 100


@dataclass
class Curve:
    thresholds: np.ndarray
    values: np.ndarray
    auc: float
    at: float | None = None
    frames: int = 0
    excluded: int = 0
    flags: dict[str, bool] = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.frames > 0


def _boxes(b) -> np.ndarray:
    return np.asarray(b, dtype=np.float64).reshape(-1, 4)


def iou(a, b) -> float:
    ax, ay, aw, ah = (float(v) for v in a)
    bx, by, bw, bh = (float(v) for v in b)
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    if union <= 0:
        return 0.0
    return inter / union


def centers(boxes) -> np.ndarray:
    b = _boxes(boxes)
    return b[:, :2] + b[:, 2:] / 2.0


def _empty(thresholds: np.ndarray, excluded: int = 0) -> Curve:
    return Curve(
        thresholds=thresholds,
        values=np.zeros(len(thresholds)),
        auc=0.0,
        frames=0,
        excluded=excluded,
        flags={"invalid": True},
    )


def _check_lengths(a: np.ndarray, b: np.ndarray) -> None:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} predictions vs {len(b)} ground-truth frames")


def precision_curve(pred_centers, gt_centers, *, at: float = 20.0, thresholds: np.ndarray = PRECISION_THRESHOLDS) -> Curve:
    p = np.asarray(pred_centers, dtype=np.float64).reshape(-1, 2)
    g = np.asarray(gt_centers, dtype=np.float64).reshape(-1, 2)
    _check_lengths(p, g)
    if len(p) == 0:
        return _empty(thresholds)
    err = np.sqrt(((p - g) ** 2).sum(axis=1))
    values = (err[None, :] <= thresholds[:, None]).mean(axis=1)
    return Curve(
        thresholds=thresholds,
        values=values,
        auc=float(values.mean()),
        at=float((err <= at).mean()),
        frames=len(p),
    )


def normalized_precision_curve(pred_centers, gt_boxes, *, thresholds: np.ndarray = NORM_PRECISION_THRESHOLDS) -> Curve:
    """Frames whose gt box has zero width or height are excluded and counted."""
    p = np.asarray(pred_centers, dtype=np.float64).reshape(-1, 2)
    g = _boxes(gt_boxes)
    _check_lengths(p, g)
    ok = (g[:, 2] > 0) & (g[:, 3] > 0)
    excluded = int((~ok).sum())
    if not ok.any():
        return _empty(thresholds, excluded)
    p, g = p[ok], g[ok]
    gc = g[:, :2] + g[:, 2:] / 2.0
    err = np.sqrt((((p - gc) / g[:, 2:]) ** 2).sum(axis=1))
    values = (err[None, :] <= thresholds[:, None]).mean(axis=1)
    return Curve(thresholds=thresholds, values=values, auc=float(values.mean()), frames=len(p), excluded=excluded)


def success_auc(pred_boxes, gt_boxes, *, thresholds: np.ndarray = SUCCESS_THRESHOLDS) -> Curve:
    p, g = _boxes(pred_boxes), _boxes(gt_boxes)
    _check_lengths(p, g)
    if len(p) == 0:
        return _empty(thresholds)
    overlaps = np.array([iou(a, b) for a, b in zip(p, g)])
    values = (overlaps[None, :] > thresholds[:, None]).mean(axis=1)
    return Curve(thresholds=thresholds, values=values, auc=float(values.mean()), frames=len(p))
