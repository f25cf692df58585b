from __future__ import annotations

import numpy as np
import pytest

from pdat_adapt.memory import REFERENCE_STAGE, STAGES, DescriptorMemory
from pdat_common.errors import DataError
from pdat_config.run_config import CsdaConfig
from tests.helpers.fixtures import gaussian_mixture
from tests.helpers.oracles import best_agreement

CSDA = CsdaConfig(memory_size=64, cluster_min=2, cluster_max=4)


def _stage_views(x: np.ndarray) -> dict[int, np.ndarray]:
    """Same cluster structure on every stage, with the axes rotated so stage indices differ."""
    return {m: np.roll(x, m, axis=1) * (1.0 + 0.1 * m) for m in STAGES}


def _filled_memory(seed: int = 0):
    rng = np.random.default_rng(seed)
    x, y = gaussian_mixture(rng, 3, per_cluster=20)
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    mem = DescriptorMemory(CSDA)
    mem.push("source", _stage_views(x[:30]))
    mem.push("target", _stage_views(x[30:]))
    return mem, x, y


def test_push_keeps_the_newest_rows():
    mem = DescriptorMemory(CsdaConfig(memory_size=5))
    mem.push("source", {m: np.full((3, 2), 1.0) for m in STAGES})
    assert len(mem) == 0
    mem.push("source", {m: np.arange(8.0).reshape(4, 2) for m in STAGES})
    assert mem.banks[(REFERENCE_STAGE, "source")].shape == (5, 2)
    assert mem.banks[(1, "source")][0].tolist() == [1.0, 1.0]
    assert mem.banks[(1, "source")][-1].tolist() == [6.0, 7.0]
    mem.push("target", {m: np.zeros((2, 2)) for m in STAGES})
    assert len(mem) == 2


def test_push_needs_every_stage():
    with pytest.raises(DataError):
        DescriptorMemory(CSDA).push("source", {4: np.zeros((1, 2))})


def test_pooled_marks_domains():
    mem, _, _ = _filled_memory()
    x, dom = mem.pooled(4)
    assert x.shape == (60, 4)
    assert dom[:30].tolist() == [0] * 30 and dom[30:].tolist() == [1] * 30
    with pytest.raises(DataError):
        DescriptorMemory(CSDA).pooled(4)


def test_refit_aligns_all_stages_to_the_reference():
    mem, x, y = _filled_memory()
    summary = mem.refit(seed=0)
    assert summary.num_clusters == 3
    assert mem.fitted and mem.num_clusters == 3
    assert sum(summary.histograms["source"]) == 30
    assert sum(summary.histograms["target"]) == 30
    event = summary.as_event()
    assert event["C_selected"] == 3 and set(event["silhouettes"]) == {"1", "2", "3", "4"}

    per_stage = mem.stage_labels(_stage_views(x))
    for col in range(1, 4):
        assert per_stage[:, col].tolist() == per_stage[:, 0].tolist()
    labels = mem.label(_stage_views(x))
    assert best_agreement(y, labels, 3) == len(y)


def test_stage4_label_mode_ignores_other_stages():
    mem, x, _ = _filled_memory(1)
    mem.cfg = CsdaConfig(memory_size=64, cluster_min=2, cluster_max=4, label_mode="stage4")
    mem.refit(seed=0)
    views = _stage_views(x)
    expected = mem.stage_labels(views)[:, STAGES.index(REFERENCE_STAGE)]
    views[1] = np.zeros_like(views[1])
    assert mem.label(views).tolist() == expected.tolist()


def test_degenerate_stage_follows_reference_labels():
    mem, x, _ = _filled_memory(2)
    for d in ("source", "target"):
        mem.banks[(1, d)] = np.ones_like(mem.banks[(1, d)])
    summary = mem.refit(seed=0)
    assert summary.flags[1]["zero_variance"] is True
    assert 1 not in mem.permutations
    per_stage = mem.stage_labels(_stage_views(x))
    assert per_stage[:, 0].tolist() == per_stage[:, 3].tolist()


def test_labelling_before_refit_fails():
    mem, x, _ = _filled_memory()
    with pytest.raises(DataError, match="not fitted"):
        mem.label(_stage_views(x))


def test_state_round_trip():
    mem, x, _ = _filled_memory()
    mem.refit(seed=0)
    other = DescriptorMemory(CSDA)
    other.load_state_dict(mem.state_dict())
    assert len(other) == len(mem)
    assert other.num_clusters == mem.num_clusters
    assert np.array_equal(other.banks[(2, "target")], mem.banks[(2, "target")])
    assert other.label(_stage_views(x)).tolist() == mem.label(_stage_views(x)).tolist()
