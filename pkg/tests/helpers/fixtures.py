"""Shared builders for tests: tiny configs, synthetic frames, samples and corpora.

Everything here is deterministic and small enough for CPU unit tests.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterable

import cv2
import numpy as np

from pdat_config.run_config import RunConfig, resolve_config
from pdat_data.batches import PairDataset
from pdat_data.pairs import DomainSample
from pdat_data.synthetic import CorpusSpec, make_synthetic_corpus

TINY_OVERRIDES: dict[str, Any] = {
    "data.template_size": 32,
    "data.search_size": 64,
    "data.aug.shift": 2.0,
    "data.min_area": 4,
    "tracker.widths": "4,8,8,8",
    "tracker.head_width": 8,
    "agda.d_model": 8,
    "agda.n_heads": 2,
    "agda.ff_width": 16,
    "agda.layers": 1,
    "agda.token_grid": 4,
    "csda.memory_size": 64,
    "csda.refit_interval": 2,
    "csda.warmup_batches": 2,
    "csda.cluster_max": 4,
    "train.epochs": 2,
    "train.batch_size": 4,
}


def tiny_config(overrides: dict[str, Any] | None = None, *, disable: Iterable[str] = ()) -> RunConfig:
    return resolve_config(preset="desk", overrides={**TINY_OVERRIDES, **(overrides or {})}, disable=disable)


def blob_frame(
    size: int | tuple[int, int],
    centers: list[tuple[int, int]],
    radius: int | list[int] = 5,
    *,
    background: int = 20,
    value: int = 220,
) -> np.ndarray:
    """Filled bright discs on a flat dark background, (H, W, 3) uint8."""
    h, w = (size, size) if isinstance(size, int) else size
    img = np.full((h, w, 3), background, dtype=np.uint8)
    radii = radius if isinstance(radius, list) else [radius] * len(centers)
    for (cx, cy), r in zip(centers, radii):
        cv2.circle(img, (int(cx), int(cy)), int(r), (value, value, value), thickness=-1)
    return img


def random_samples(
    n: int,
    domain: str,
    *,
    template_size: int = 32,
    seed: int = 0,
    prefix: str | None = None,
) -> list[DomainSample]:
    """Random-texture pairs; source samples get a centered box of a quarter of the search side."""
    rng = np.random.default_rng(seed)
    s = 2 * template_size
    out = []
    for i in range(n):
        box = np.array([s / 2, s / 2, s / 4, s / 4]) if domain == "source" else None
        out.append(
            DomainSample(
                sample_id=f"{prefix or domain}-{i:04d}",
                template=rng.integers(0, 256, size=(template_size, template_size, 3), dtype=np.uint8),
                search=rng.integers(0, 256, size=(s, s, 3), dtype=np.uint8),
                box=box,
                domain=domain,
            )
        )
    return out


def tiny_datasets(n_source: int = 8, n_target: int = 8, *, seed: int = 0) -> tuple[PairDataset, PairDataset]:
    return (
        PairDataset(random_samples(n_source, "source", seed=seed), "source"),
        PairDataset(random_samples(n_target, "target", seed=seed + 1), "target"),
    )


def tiny_corpus(root: Path, **spec: Any) -> dict[str, Path]:
    params = {"sequences": 2, "eval_sequences": 1, "frames": 12, "size": 64, "blobs": 2, "seed": 0}
    params.update(spec)
    return make_synthetic_corpus(root, CorpusSpec(**params))


def gaussian_mixture(
    rng: np.random.Generator,
    n_clusters: int,
    *,
    per_cluster: int = 40,
    dim: int = 4,
    separation: float = 8.0,
    sigma: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic clusters whose centers lie ``separation * sigma`` apart along distinct axes."""
    centers = np.zeros((n_clusters, max(dim, n_clusters)))
    for c in range(n_clusters):
        centers[c, c] = separation * sigma / np.sqrt(2.0)
    x = np.concatenate([rng.normal(centers[c], sigma, size=(per_cluster, centers.shape[1])) for c in range(n_clusters)])
    y = np.repeat(np.arange(n_clusters), per_cluster)
    return x, y
