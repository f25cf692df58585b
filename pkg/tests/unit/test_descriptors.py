from __future__ import annotations

import numpy as np
import pytest
import torch

from pdat_adapt.descriptors import correlation_descriptor, pyramid_descriptors, to_records
from pdat_tracker.backbone import Backbone, extract_pyramid
from tests.helpers.oracles import correlate_loops


def test_descriptor_matches_pooled_correlation_oracle():
    g = torch.Generator().manual_seed(0)
    z = torch.randn(2, 6, 3, 3, generator=g, dtype=torch.float64)
    x = torch.randn(2, 6, 7, 7, generator=g, dtype=torch.float64)
    vec, zero = correlation_descriptor(z, x)
    assert vec.shape == (2, 6)
    assert not zero.any()
    for b in range(2):
        pooled = correlate_loops(z[b].numpy(), x[b].numpy()).mean(axis=(1, 2))
        np.testing.assert_allclose(vec[b].numpy(), pooled / np.linalg.norm(pooled), atol=1e-6)
    np.testing.assert_allclose(vec.norm(dim=1).numpy(), 1.0, atol=1e-6)


def test_descriptor_is_scale_invariant():
    g = torch.Generator().manual_seed(1)
    z = torch.randn(1, 4, 2, 2, generator=g, dtype=torch.float64)
    x = torch.randn(1, 4, 5, 5, generator=g, dtype=torch.float64)
    a, _ = correlation_descriptor(z, x)
    b, _ = correlation_descriptor(z, 5.0 * x)
    assert torch.allclose(a, b, atol=1e-12)

    self_vec, zero = correlation_descriptor(x, x)
    assert not zero.any()
    assert float(self_vec.norm()) == pytest.approx(1.0, abs=1e-6)


def test_zero_response_gives_flagged_zero_vector():
    vec, zero = correlation_descriptor(torch.zeros(2, 3, 2, 2), torch.rand(2, 3, 4, 4))
    assert zero.tolist() == [True, True]
    assert torch.count_nonzero(vec) == 0
    recs = to_records(vec, stage=2, domain="target", sample_ids=["a", "b"])
    assert [r.zero_response for r in recs] == [True, True]
    assert recs[0].stage == 2 and recs[1].sample_id == "b"


def test_gradients_reach_both_branches():
    z = torch.randn(1, 4, 2, 2, requires_grad=True)
    x = torch.randn(1, 4, 5, 5, requires_grad=True)
    vec, _ = correlation_descriptor(z, x)
    (vec * torch.arange(4.0)).sum().backward()
    assert z.grad is not None and torch.count_nonzero(z.grad) > 0
    assert x.grad is not None and torch.count_nonzero(x.grad) > 0


def test_pyramid_descriptors_cover_every_stage():
    torch.manual_seed(0)
    bb = Backbone((4, 8, 8, 8))
    z = extract_pyramid(torch.rand(2, 3, 32, 32), bb, kind="template")
    x = extract_pyramid(torch.rand(2, 3, 64, 64), bb)
    d = pyramid_descriptors(z, x)
    assert sorted(d) == [1, 2, 3, 4]
    assert d[1].shape == (2, 4) and d[4].shape == (2, 8)
    assert sorted(pyramid_descriptors(z, x, (4,))) == [4]
