"""Local MMD between class-conditional source and target distributions.

For each class ``c`` present in both domains, with per-domain class weights
``w_i = 1 / n_c`` on members of ``c``::

    ws^T K_ss ws + wt^T K_tt wt - 2 ws^T K_st wt

averaged over those classes. ``K`` is a mean of RBF kernels whose bandwidths
are multiples of the median pairwise distance of the pooled samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from pdat_common.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelConfig:
    family: str = "rbf"
    multipliers: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)

    def __post_init__(self) -> None:
        if self.family != "rbf":
            raise ConfigError(f"unsupported kernel family {self.family!r}")
        if not self.multipliers or any(m <= 0 for m in self.multipliers):
            raise ConfigError("kernel multipliers must be a non-empty list of positive reals",
                              details={"key": "csda.kernel_multipliers"})


def _sq_dists(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(dim=-1)


def median_bandwidth(a: torch.Tensor, b: torch.Tensor) -> tuple[float, bool]:
    """Median pairwise distance over every row of ``a`` and ``b`` pooled; ``(1.0, True)`` when it is 0.

    Repeated rows are kept, so their zero distances count toward the median.
    """
    with torch.no_grad():
        pooled = torch.cat([a, b]).detach().to(torch.float64)
        n = pooled.shape[0]
        if n < 2:
            return 1.0, True
        iu = torch.triu_indices(n, n, offset=1)
        d = _sq_dists(pooled, pooled)[iu[0], iu[1]].clamp_min(0).sqrt()
        sigma = float(torch.quantile(d, 0.5).item())
    if not sigma > 0:
        return 1.0, True
    return sigma, False


def kernel_matrix(
    a: torch.Tensor,
    b: torch.Tensor,
    cfg: KernelConfig = KernelConfig(),
    *,
    bandwidth: float | None = None,
) -> torch.Tensor:
    """Mean over multipliers ``mu`` of ``exp(-|a-b|^2 / (2 (mu * sigma)^2))``."""
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    if bandwidth is None:
        bandwidth, degenerate = median_bandwidth(a, b)
        if degenerate:
            logger.debug("median bandwidth is 0; using 1.0")
    d2 = _sq_dists(a, b)
    k = torch.zeros_like(d2)
    for mu in cfg.multipliers:
        k = k + torch.exp(-d2 / (2.0 * (mu * bandwidth) ** 2))
    return k / len(cfg.multipliers)


def lmmd_weights(labels: Sequence[int] | np.ndarray | torch.Tensor, c: int) -> np.ndarray | None:
    """``1/n_c`` on members of class ``c``, 0 elsewhere; ``None`` when the class is absent."""
    lab = labels.detach().cpu().numpy() if isinstance(labels, torch.Tensor) else np.asarray(labels)
    members = lab == c
    n_c = int(members.sum())
    if n_c == 0:
        return None
    return members.astype(np.float64) / n_c


@dataclass
class LmmdResult:
    loss: torch.Tensor
    present_classes: list[int]
    bandwidth: float
    flags: dict[str, bool] = field(default_factory=dict)

    @property
    def num_present(self) -> int:
        return len(self.present_classes)


def lmmd_loss(
    feat_s: torch.Tensor,
    feat_t: torch.Tensor,
    labels_s: Sequence[int] | np.ndarray | torch.Tensor,
    labels_t: Sequence[int] | np.ndarray | torch.Tensor,
    num_classes: int,
    cfg: KernelConfig = KernelConfig(),
    *,
    bandwidth: float | None = None,
) -> LmmdResult:
    """Class-averaged MMD over classes present in both domains (C').

    One bandwidth, from the pooled samples, is shared by all three kernel blocks.
    With C' = 0 the loss is 0 and ``flags["no_shared_classes"]`` is set.
    """
    if feat_s.dim() != 2 or feat_t.dim() != 2 or feat_s.shape[1] != feat_t.shape[1]:
        raise ShapeError(
            f"feature shapes {tuple(feat_s.shape)} and {tuple(feat_t.shape)} are not comparable",
            details={"source": list(feat_s.shape), "target": list(feat_t.shape)},
        )
    flags: dict[str, bool] = {}
    if bandwidth is None:
        bandwidth, degenerate = median_bandwidth(feat_s, feat_t)
        if degenerate:
            flags["degenerate_bandwidth"] = True

    present: list[tuple[int, np.ndarray, np.ndarray]] = []
    for c in range(num_classes):
        ws, wt = lmmd_weights(labels_s, c), lmmd_weights(labels_t, c)
        if ws is not None and wt is not None:
            present.append((c, ws, wt))

    if not present:
        flags["no_shared_classes"] = True
        zero = (feat_s.sum() + feat_t.sum()) * 0.0
        return LmmdResult(loss=zero, present_classes=[], bandwidth=bandwidth, flags=flags)

    k_ss = kernel_matrix(feat_s, feat_s, cfg, bandwidth=bandwidth)
    k_tt = kernel_matrix(feat_t, feat_t, cfg, bandwidth=bandwidth)
    k_st = kernel_matrix(feat_s, feat_t, cfg, bandwidth=bandwidth)

    total = None
    for _, ws_np, wt_np in present:
        ws = torch.as_tensor(ws_np, dtype=feat_s.dtype, device=feat_s.device)
        wt = torch.as_tensor(wt_np, dtype=feat_t.dtype, device=feat_t.device)
        term = ws @ k_ss @ ws + wt @ k_tt @ wt - 2.0 * (ws @ k_st @ wt)
        total = term if total is None else total + term
    return LmmdResult(
        loss=total / len(present),
        present_classes=[c for c, _, _ in present],
        bandwidth=bandwidth,
        flags=flags,
    )


def mmd2(a: torch.Tensor, b: torch.Tensor, cfg: KernelConfig = KernelConfig(), *, bandwidth: float | None = None) -> torch.Tensor:
    """Unweighted squared MMD (biased estimator) with the same kernel and bandwidth rule."""
    if bandwidth is None:
        bandwidth, _ = median_bandwidth(a, b)
    return (
        kernel_matrix(a, a, cfg, bandwidth=bandwidth).mean()
        + kernel_matrix(b, b, cfg, bandwidth=bandwidth).mean()
        - 2.0 * kernel_matrix(a, b, cfg, bandwidth=bandwidth).mean()
    )
