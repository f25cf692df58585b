from __future__ import annotations

import numpy as np
import pytest

from pdat_adapt.clustering import ClusterModel, assign_labels, fit_clusters
from pdat_adapt.voting import align_stage_labels, alignment_permutation, cooccurrence, vote_labels
from pdat_common.errors import DataError
from tests.helpers.fixtures import gaussian_mixture
from tests.helpers.oracles import best_agreement, silhouette_loops, vote_brute


def test_three_separated_blobs_select_three_clusters():
    x, _ = gaussian_mixture(np.random.default_rng(0), 3, per_cluster=15)
    model = fit_clusters(x, (2, 4), seed=0)
    assert model.num_clusters == 3
    assert model.flags == {}
    assert set(model.scores) == {2, 3, 4}
    assert max(model.scores, key=model.scores.get) == 3


def test_silhouette_matches_double_loop_oracle():
    x, _ = gaussian_mixture(np.random.default_rng(1), 2, per_cluster=12, separation=3.0)
    model = fit_clusters(x, (2, 3), seed=0)
    labels = assign_labels(model, x)
    assert model.silhouette == pytest.approx(silhouette_loops(x, labels), abs=1e-6)


def test_fit_is_deterministic_for_a_seed():
    x, _ = gaussian_mixture(np.random.default_rng(2), 3, per_cluster=10)
    a = fit_clusters(x, (2, 4), seed=5)
    b = fit_clusters(x, (2, 4), seed=5)
    assert np.array_equal(a.centroids, b.centroids)


def test_too_few_vectors_fall_back_to_two():
    x, _ = gaussian_mixture(np.random.default_rng(3), 3, per_cluster=3)
    model = fit_clusters(x, (2, 10), seed=0)
    assert model.num_clusters == 2
    assert model.flags["too_few_vectors"] is True


def test_two_distinct_vectors_become_their_own_centroids():
    x = np.array([[0.0, 0.0], [5.0, 5.0]])
    model = fit_clusters(x, (2, 10), seed=0)
    assert model.num_clusters == 2
    assert model.flags == {"too_few_vectors": True}
    assert sorted(map(tuple, model.centroids.tolist())) == [(0.0, 0.0), (5.0, 5.0)]
    assert model.silhouette == 0.0
    labels = assign_labels(model, x)
    assert labels[0] != labels[1]


def test_identical_vectors_fall_back_with_zero_variance_flag():
    model = fit_clusters(np.ones((30, 4)), (2, 10), seed=0)
    assert model.num_clusters == 2
    assert model.silhouette == 0.0
    assert model.flags["zero_variance"] is True
    assert not np.array_equal(model.centroids[0], model.centroids[1])


def test_cluster_model_state_round_trip():
    x, _ = gaussian_mixture(np.random.default_rng(4), 2, per_cluster=10)
    model = fit_clusters(x, (2, 3), seed=0)
    back = ClusterModel.from_state(model.to_state())
    assert back.num_clusters == model.num_clusters
    assert np.array_equal(back.centroids, model.centroids)
    assert back.scores == model.scores


def test_assign_labels_nearest_centroid_with_low_index_ties():
    model = ClusterModel(stage=4, num_clusters=2, centroids=np.array([[0.0, 0.0], [2.0, 0.0]]), silhouette=0.0)
    assert assign_labels(model, model.centroids).tolist() == [0, 1]
    assert assign_labels(model, np.array([[1.0, 0.0]])).tolist() == [0]

    rng = np.random.default_rng(0)
    cents = rng.normal(size=(4, 3))
    m = ClusterModel(stage=4, num_clusters=4, centroids=cents, silhouette=0.0)
    pts = rng.normal(size=(50, 3))
    brute = [int(np.argmin([np.linalg.norm(p - c) for c in cents])) for p in pts]
    assert assign_labels(m, pts).tolist() == brute


@pytest.mark.parametrize(
    "row,expected",
    [
        ([1, 1, 0, 0], 0),
        ([0, 1, 1, 0], 0),
        ([2, 2, 2, 2], 2),
        ([0, 0, 0, 1], 0),
    ],
)
def test_vote_examples(row, expected):
    assert vote_labels(np.array([row])).tolist() == [expected]


def test_vote_matches_brute_force_scorer():
    rng = np.random.default_rng(0)
    weights = (1.0, 2.0, 3.0, 4.0)
    rows = rng.integers(0, 4, size=(1000, 4))
    got = vote_labels(rows, weights, num_classes=4)
    assert got.tolist() == [vote_brute(r.tolist(), weights) for r in rows]


def test_vote_rejects_wrong_stage_count():
    with pytest.raises(DataError):
        vote_labels(np.zeros((3, 3), dtype=int))
    assert vote_labels(np.zeros((0, 4), dtype=int)).shape == (0,)


def test_alignment_identity_and_swap():
    ref = np.array([0, 0, 1, 1, 2])
    assert alignment_permutation(ref, ref, reference_clusters=3, other_clusters=3).tolist() == [0, 1, 2]
    swapped = np.array([1, 1, 0, 0, 2])
    assert align_stage_labels(ref, swapped, reference_clusters=3, other_clusters=3).tolist() == ref.tolist()
    assert cooccurrence(ref, swapped, 3)[1, 0] == 2


def test_alignment_matches_exhaustive_search():
    rng = np.random.default_rng(0)
    for _ in range(100):
        c = int(rng.integers(2, 6))
        ref = rng.integers(0, c, size=30)
        other = np.where(rng.random(30) < 0.6, rng.permutation(c)[ref], rng.integers(0, c, size=30))
        aligned = align_stage_labels(ref, other, reference_clusters=c, other_clusters=c)
        assert int((aligned == ref).sum()) == best_agreement(ref, other, c)


def test_alignment_needs_equal_cluster_counts():
    with pytest.raises(DataError, match="cannot align"):
        alignment_permutation([0, 1], [0, 1], reference_clusters=2, other_clusters=3)
