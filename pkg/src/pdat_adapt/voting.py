from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from pdat_common.errors import DataError


def cooccurrence(reference: np.ndarray, other: np.ndarray, num_clusters: int) -> np.ndarray:
    """``M[i, j]`` counts samples with other-label ``i`` and reference-label ``j``."""
    m = np.zeros((num_clusters, num_clusters), dtype=np.int64)
    np.add.at(m, (other, reference), 1)
    return m


def alignment_permutation(
    reference_labels: Sequence[int],
    other_labels: Sequence[int],
    *,
    reference_clusters: int,
    other_clusters: int,
) -> np.ndarray:
    """``perm[k]`` is the reference index matched to other-cluster ``k`` (max co-occurrence)."""
    if reference_clusters != other_clusters:
        raise DataError(
            f"cannot align {other_clusters} clusters to {reference_clusters}",
            details={"reference_clusters": reference_clusters, "other_clusters": other_clusters},
        )
    ref = np.asarray(reference_labels, dtype=np.int64)
    oth = np.asarray(other_labels, dtype=np.int64)
    if ref.shape != oth.shape:
        raise DataError("label lists must cover the same samples")
    rows, cols = linear_sum_assignment(cooccurrence(ref, oth, reference_clusters), maximize=True)
    perm = np.empty(reference_clusters, dtype=np.int64)
    perm[rows] = cols
    return perm


def align_stage_labels(
    reference_labels: Sequence[int],
    other_labels: Sequence[int],
    *,
    reference_clusters: int,
    other_clusters: int,
) -> np.ndarray:
    """Relabel ``other_labels`` into the reference index space."""
    perm = alignment_permutation(
        reference_labels, other_labels, reference_clusters=reference_clusters, other_clusters=other_clusters
    )
    return perm[np.asarray(other_labels, dtype=np.int64)]


def vote_labels(
    per_stage_labels: np.ndarray,
    weights: Sequence[float] = (1.0, 2.0, 3.0, 4.0),
    *,
    num_classes: int | None = None,
) -> np.ndarray:
    """Weighted vote over aligned per-stage labels, one row per sample.

    The class with the largest summed stage weight wins. Ties go to the label of
    the last stage whose label is among the tied classes (stage 4 first).
    """
    labels = np.asarray(per_stage_labels, dtype=np.int64)
    if labels.ndim != 2 or labels.shape[1] != len(weights):
        raise DataError(f"expected (N, {len(weights)}) labels, got {labels.shape}")
    if labels.size == 0:
        return np.zeros(0, dtype=np.int64)
    c = int(num_classes if num_classes is not None else labels.max() + 1)
    w = np.asarray(weights, dtype=np.float64)

    out = np.empty(len(labels), dtype=np.int64)
    for i, row in enumerate(labels):
        scores = np.zeros(c, dtype=np.float64)
        for stage, lab in enumerate(row):
            scores[lab] += w[stage]
        tied = np.flatnonzero(scores == scores.max())
        if len(tied) == 1:
            out[i] = tied[0]
            continue
        for lab in row[::-1]:
            if lab in tied:
                out[i] = lab
                break
    return out
