from __future__ import annotations

import numpy as np
import pytest
import torch

from pdat_common.errors import ShapeError
from pdat_config.run_config import TrackerConfig
from pdat_data.sequences import Sequence
from pdat_tracker.backbone import Backbone, extract_pyramid
from pdat_tracker.heads import HeadOutput, correlate, grid_points
from pdat_tracker.losses import build_targets, iou_loss, tracking_loss
from pdat_tracker.tracker import TrackerModel, decode_box, hann_window, score_map, track_sequence
from tests.helpers.fixtures import blob_frame, tiny_config
from tests.helpers.oracles import correlate_loops


def test_correlate_matches_loop_oracle():
    g = torch.Generator().manual_seed(0)
    z = torch.randn(3, 2, 3, generator=g, dtype=torch.float64)
    x = torch.randn(3, 5, 6, generator=g, dtype=torch.float64)
    out = correlate(z, x)
    assert out.shape == (3, 4, 4)
    np.testing.assert_allclose(out.numpy(), correlate_loops(z.numpy(), x.numpy()), rtol=1e-12, atol=1e-12)

    batched = correlate(z[None].repeat(2, 1, 1, 1), x[None].repeat(2, 1, 1, 1))
    assert batched.shape == (2, 3, 4, 4)
    assert torch.allclose(batched[1], out)


def test_correlate_shape_errors():
    with pytest.raises(ShapeError):
        correlate(torch.zeros(2, 3, 3), torch.zeros(3, 5, 5))
    with pytest.raises(ShapeError):
        correlate(torch.zeros(2, 6, 6), torch.zeros(2, 5, 5))


def test_pyramid_halves_each_stage():
    bb = Backbone((4, 8, 8, 8), in_channels=3)
    pyr = extract_pyramid(torch.zeros(2, 3, 64, 64), bb)
    assert [tuple(s.shape) for s in pyr.stages] == [(2, 4, 32, 32), (2, 8, 16, 16), (2, 8, 8, 8), (2, 8, 4, 4)]
    with pytest.raises(ShapeError):
        extract_pyramid(torch.zeros(1, 3, 40, 40), bb)
    with pytest.raises(ShapeError):
        extract_pyramid(torch.zeros(1, 1, 64, 64), bb)


def test_model_forward_shapes():
    torch.manual_seed(0)
    cfg = tiny_config()
    model = TrackerModel(cfg.tracker)
    out, z, x = model(torch.rand(2, 3, 32, 32), torch.rand(2, 3, 64, 64))
    assert out.cls.shape == (2, 1, 3, 3)
    assert out.reg.shape == (2, 4, 3, 3)
    assert bool((out.reg > 0).all())
    assert z.stage(4).shape[-1] == 2 and x.stage(4).shape[-1] == 4


def test_grid_points_center_on_the_search_patch():
    p = grid_points(3, 16, 64, dtype=torch.float64)
    assert p.tolist() == [16.0, 32.0, 48.0]
    assert grid_points(7, 16, 192).tolist()[3] == 96.0


def test_targets_mark_points_strictly_inside():
    boxes = torch.tensor([[32.0, 32.0, 20.0, 20.0]])
    tg = build_targets(boxes, 3, 16, 64)
    assert tg.positive[0].tolist() == [[False, False, False], [False, True, False], [False, False, False]]
    assert torch.allclose(tg.centerness[0, 1, 1], torch.tensor(1.0))
    # a box edge through a grid point does not make it positive
    edge = build_targets(torch.tensor([[32.0, 32.0, 32.0, 32.0]]), 3, 16, 64)
    assert int(edge.positive.sum()) == 1


def test_iou_loss_is_zero_for_exact_boxes():
    t = torch.tensor([[3.0, 4.0, 5.0, 6.0]])
    assert float(iou_loss(t, t)) == 0.0
    assert float(iou_loss(t * 2, t)) > 0.0


def _head(cls, reg, cen) -> HeadOutput:
    return HeadOutput(cls=cls, reg=reg, cen=cen)


def test_tracking_loss_without_positive_cells():
    n = 3
    pred = _head(torch.zeros(1, 1, n, n), torch.ones(1, 4, n, n), torch.zeros(1, 1, n, n, requires_grad=True))
    bundle = tracking_loss(pred, torch.tensor([[5.0, 5.0, 4.0, 4.0]]), stride=16, search_size=64)
    assert bundle.flags["no_positive"] is True
    assert float(bundle.reg) == 0.0 and float(bundle.cen) == 0.0
    assert float(bundle.cls) == pytest.approx(np.log(2.0))


def test_tracking_loss_optimum_for_regression_and_centerness():
    n = 3
    gt = torch.tensor([[32.0, 32.0, 20.0, 20.0]])
    tg = build_targets(gt, n, 16, 64)
    reg = tg.ltrb.clone().clamp_min(1.0)
    cen_t = tg.centerness.clamp(1e-6, 1 - 1e-6)
    cen_logits = torch.log(cen_t / (1 - cen_t))[:, None]
    cls_logits = torch.where(tg.positive, torch.tensor(30.0), torch.tensor(-30.0))[:, None]
    bundle = tracking_loss(_head(cls_logits, reg, cen_logits), gt, stride=16, search_size=64)
    assert float(bundle.reg) == pytest.approx(0.0, abs=1e-7)
    assert float(bundle.cen) == pytest.approx(0.0, abs=1e-5)
    assert float(bundle.cls) < 1e-10
    assert float(bundle.total) == pytest.approx(float(bundle.cls + 3 * bundle.reg + bundle.cen))


def test_hann_window_and_score_map():
    w = hann_window(3)
    assert w.shape == (3, 3)
    assert w[1, 1] == pytest.approx(1.0)
    assert w[0, 0] == pytest.approx(0.25)
    out = _head(torch.zeros(1, 1, 3, 3), torch.ones(1, 4, 3, 3), torch.zeros(1, 1, 3, 3))
    s = score_map(out, 0.0)
    assert np.allclose(s, 0.25)
    assert np.argmax(score_map(out, 0.3)) == 4


def test_decode_box_at_best_cell():
    reg = torch.zeros(1, 4, 3, 3)
    reg[0, :, 0, 2] = torch.tensor([2.0, 3.0, 4.0, 5.0])
    out = _head(torch.zeros(1, 1, 3, 3), reg, torch.zeros(1, 1, 3, 3))
    scores = np.zeros((3, 3))
    scores[0, 2] = 1.0
    box, score = decode_box(out, scores, stride=16, search_size=64)
    assert box == (46.0, 13.0, 6.0, 8.0)
    assert score == 1.0


def test_track_sequence_runs_one_pass():
    torch.manual_seed(0)
    cfg = tiny_config()
    model = TrackerModel(cfg.tracker)
    frames = [blob_frame(64, [(20 + t, 30)], 6) for t in range(5)]
    seq = Sequence(id="s", frames=frames, boxes=None, domain="target")
    results = track_sequence(seq, (14.0, 24.0, 13.0, 13.0), model, data=cfg.data, tracker=cfg.tracker)
    assert len(results) == 5
    assert results[0].box == (14.0, 24.0, 13.0, 13.0)
    for r in results[1:]:
        x, y, w, h = r.box
        assert w >= 1.0 and h >= 1.0
        assert x >= 0 and y >= 0 and x + w <= 64 + 1e-6 and y + h <= 64 + 1e-6


def test_tracker_config_head_stage_sets_stride():
    model = TrackerModel(TrackerConfig(widths=(4, 8, 8, 8), head_width=8, head_stage=3))
    assert model.stride == 8
