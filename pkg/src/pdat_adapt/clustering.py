"""K-means with silhouette-selected cluster count, and nearest-centroid labelling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

logger = logging.getLogger(__name__)


@dataclass
class ClusterModel:
    stage: int
    num_clusters: int
    centroids: np.ndarray
    silhouette: float
    scores: dict[int, float] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)

    def to_state(self) -> dict:
        return {
            "stage": self.stage,
            "num_clusters": self.num_clusters,
            "centroids": self.centroids.copy(),
            "silhouette": self.silhouette,
            "scores": dict(self.scores),
            "flags": dict(self.flags),
        }

    @classmethod
    def from_state(cls, state: dict) -> "ClusterModel":
        return cls(
            stage=int(state["stage"]),
            num_clusters=int(state["num_clusters"]),
            centroids=np.asarray(state["centroids"], dtype=np.float64),
            silhouette=float(state["silhouette"]),
            scores={int(k): float(v) for k, v in state.get("scores", {}).items()},
            flags=dict(state.get("flags", {})),
        )


def _kmeans(x: np.ndarray, c: int, seed: int, max_iter: int, restarts: int) -> KMeans:
    return KMeans(
        n_clusters=c,
        init="k-means++",
        n_init=restarts,
        max_iter=max_iter,
        random_state=seed,
    ).fit(x)


def _zero_variance_model(x: np.ndarray, stage: int, flags: dict[str, bool]) -> ClusterModel:
    mean = x.mean(axis=0) if len(x) else np.zeros(x.shape[1])
    offset = np.zeros_like(mean)
    offset[0] = 1e-6
    flags["zero_variance"] = True
    return ClusterModel(stage=stage, num_clusters=2, centroids=np.stack([mean, mean + offset]), silhouette=0.0, flags=flags)


def fit_clusters(
    vectors: np.ndarray,
    c_range: tuple[int, int] = (2, 10),
    seed: int = 0,
    *,
    stage: int = 4,
    max_iter: int = 50,
    restarts: int = 3,
) -> ClusterModel:
    """Fit K-means for every C in ``c_range`` and keep the best mean silhouette (ties: smaller C).

    Fewer than ``2 * c_max`` vectors fall back to C = 2; identical vectors give
    two centroids 1e-6 apart with silhouette 0. Both cases are flagged.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        x = x.reshape(len(x), -1)
    c_min, c_max = int(c_range[0]), int(c_range[1])
    flags: dict[str, bool] = {}

    if len(x) < 2 or np.all(x == x[0]):
        logger.warning("stage %d: %d descriptors with zero variance; using C=2 fallback", stage, len(x))
        return _zero_variance_model(x, stage, flags)

    candidates = list(range(c_min, c_max + 1))
    if len(x) < 2 * c_max:
        logger.warning("stage %d: %d descriptors < 2*C_max=%d; using C=2", stage, len(x), 2 * c_max)
        flags["too_few_vectors"] = True
        candidates = [2]

    best: KMeans | None = None
    best_c, best_s = candidates[0], -np.inf
    scores: dict[int, float] = {}
    for c in candidates:
        if c > len(x):
            break
        km = _kmeans(x, c, seed, max_iter, restarts)
        labels = km.labels_
        n_labels = len(np.unique(labels))
        if n_labels < 2:
            s = -1.0
        elif n_labels == len(x):
            # all singletons; each scores 0
            s = 0.0
        else:
            s = float(silhouette_score(x, labels))
        scores[c] = s
        if s > best_s:
            best, best_c, best_s = km, c, s

    if best is None:
        return _zero_variance_model(x, stage, flags)

    return ClusterModel(
        stage=stage,
        num_clusters=best_c,
        centroids=np.asarray(best.cluster_centers_, dtype=np.float64),
        silhouette=best_s,
        scores=scores,
        flags=flags,
    )


def assign_labels(model: ClusterModel, vectors: np.ndarray) -> np.ndarray:
    """Nearest centroid (Euclidean); equidistant ties go to the lower index."""
    x = np.asarray(vectors, dtype=np.float64).reshape(-1, model.centroids.shape[1])
    d2 = ((x[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=1).astype(np.int64)
