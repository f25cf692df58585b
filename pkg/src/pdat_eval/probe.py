from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import train_test_split

from pdat_adapt.lmmd import KernelConfig, mmd2
from pdat_common.errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbeResult:
    mmd2: float
    probe_accuracy: float
    n_source: int
    n_target: int

    def as_dict(self) -> dict:
        return {
            "mmd2": self.mmd2,
            "probe_accuracy": self.probe_accuracy,
            "n_source": self.n_source,
            "n_target": self.n_target,
        }


def domain_gap_probe(
    descriptors_s: np.ndarray,
    descriptors_t: np.ndarray,
    *,
    kernel: KernelConfig = KernelConfig(),
    min_samples: int = 32,
    holdout: float = 0.2,
    seed: int = 0,
) -> ProbeResult:
    """Squared MMD between the two descriptor sets and the held-out accuracy of a linear domain classifier."""
    s = np.asarray(descriptors_s, dtype=np.float64)
    t = np.asarray(descriptors_t, dtype=np.float64)
    if s.ndim != 2 or t.ndim != 2 or s.shape[1] != t.shape[1]:
        raise DataError(f"descriptor shapes {s.shape} and {t.shape} are not comparable")
    if len(s) < min_samples or len(t) < min_samples:
        raise DataError(
            f"domain gap probe needs at least {min_samples} descriptors per domain",
            details={"source": len(s), "target": len(t)},
        )

    gap = float(mmd2(torch.from_numpy(s), torch.from_numpy(t), kernel).item())

    x = np.concatenate([s, t])
    y = np.concatenate([np.zeros(len(s), dtype=np.int64), np.ones(len(t), dtype=np.int64)])
    x_tr, x_te, y_tr, y_te = train_test_split(x, y, test_size=holdout, stratify=y, random_state=seed)
    clf = LogisticRegression(max_iter=1000)
    clf.fit(x_tr, y_tr)
    acc = float(clf.score(x_te, y_te))
    logger.info("domain gap: mmd2=%.6f probe accuracy=%.3f", gap, acc)
    return ProbeResult(mmd2=gap, probe_accuracy=acc, n_source=len(s), n_target=len(t))
