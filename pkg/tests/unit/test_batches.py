from __future__ import annotations

import numpy as np
import pytest
import torch

from pdat_common.errors import DataError
from pdat_data.batches import (
    CyclicEpochSampler,
    MixedBatchStream,
    PairDataset,
    batch_iterator,
    collate,
    patches_to_tensor,
)
from tests.helpers.fixtures import random_samples, tiny_datasets


def test_collate_scales_and_transposes():
    samples = random_samples(3, "source")
    b = collate(samples, in_channels=3)
    assert b.template.shape == (3, 3, 32, 32)
    assert b.search.shape == (3, 3, 64, 64)
    assert b.boxes.shape == (3, 4)
    assert float(b.search.max()) <= 1.0
    assert torch.allclose(b.template[0, :, 0, 0], torch.tensor(samples[0].template[0, 0] / 255.0, dtype=torch.float32))


def test_collate_target_has_no_boxes_and_rejects_mixed_domains():
    assert collate(random_samples(2, "target")).boxes is None
    with pytest.raises(DataError):
        collate(random_samples(1, "source") + random_samples(1, "target"))
    with pytest.raises(DataError):
        collate([])


def test_grayscale_conversion():
    gray = patches_to_tensor([np.full((4, 4, 3), 51, np.uint8)], in_channels=1)
    assert gray.shape == (1, 1, 4, 4)
    assert torch.allclose(gray, torch.full_like(gray, 0.2))
    rgb = patches_to_tensor([np.full((4, 4, 1), 51, np.uint8)], in_channels=3)
    assert rgb.shape == (1, 3, 4, 4)


def test_dataset_is_single_domain():
    with pytest.raises(DataError):
        PairDataset(random_samples(2, "target"), "source")


def test_each_step_holds_half_and_half():
    src, tgt = tiny_datasets(6, 10)
    stream = MixedBatchStream(src, tgt, 4)
    assert stream.steps_per_epoch == 5
    batches = list(stream.epoch(0))
    assert len(batches) == 5
    for s, t in batches:
        assert len(s) == 2 and len(t) == 2
        assert s.domain == "source" and t.domain == "target"
    seen_target = {i for _, t in batches for i in t.ids}
    assert len(seen_target) == 10


def test_epoch_order_depends_only_on_seed_and_epoch():
    src, tgt = tiny_datasets(6, 6)
    a = [s.ids for s, _ in MixedBatchStream(src, tgt, 4, seed=3).epoch(1)]
    b = [s.ids for s, _ in MixedBatchStream(src, tgt, 4, seed=3).epoch(1)]
    c = [s.ids for s, _ in MixedBatchStream(src, tgt, 4, seed=3).epoch(2)]
    assert a == b
    assert a != c


def test_source_only_stream():
    src, _ = tiny_datasets(5, 1)
    steps = list(MixedBatchStream(src, None, 4).epoch(0))
    assert len(steps) == 3
    assert all(t is None for _, t in steps)


def test_batch_iterator_validates_eagerly():
    src, tgt = tiny_datasets(4, 4)
    with pytest.raises(DataError):
        batch_iterator(src, PairDataset([], "target"), 4)
    with pytest.raises(DataError):
        batch_iterator(src, tgt, 3)
    it = batch_iterator(src, tgt, 4, epochs=2)
    assert len(list(it)) == 4


def test_cyclic_sampler_repeats_one_permutation_per_epoch():
    s = CyclicEpochSampler(4, 10, seed=1, stream=0)
    first = list(s)
    assert len(first) == len(s) == 10
    assert sorted(first[:4]) == [0, 1, 2, 3]
    assert first[4:8] == first[:4] and first[8:] == first[:2]
    assert list(s) == first
    s.set_epoch(1)
    assert sorted(list(s)[:4]) == [0, 1, 2, 3]
    s.set_epoch(0)
    assert list(s) == first


def test_worker_processes_give_the_same_batches():
    src, tgt = tiny_datasets(6, 6)
    inproc = [(s.ids, t.ids) for s, t in MixedBatchStream(src, tgt, 4, seed=2).epoch(1)]
    pooled = MixedBatchStream(src, tgt, 4, seed=2, workers=2)
    got = [(s.ids, t.ids) for s, t in pooled.epoch(1)]
    assert got == inproc
    s, t = next(iter(pooled.epoch(1)))
    assert s.template.shape == (2, 3, 32, 32) and t.boxes is None
