from __future__ import annotations

import json

import pytest
import torch

from pdat_common.errors import DataError
from pdat_tracker.checkpoint import (
    MANIFEST_FILE,
    PARAMS_FILE,
    SNAPSHOT_FILE,
    load_checkpoint,
    load_model_weights,
    save_checkpoint,
)
from pdat_tracker.tracker import TrackerModel
from tests.helpers.fixtures import tiny_config


def test_checkpoint_directory_layout(tmp_path):
    cfg = tiny_config()
    torch.manual_seed(0)
    model = TrackerModel(cfg.tracker)
    d = save_checkpoint(
        tmp_path / "epoch-001",
        {"model": model.state_dict(), "iteration": 7},
        config_text=cfg.to_text(),
        step=7,
        epoch=1,
        metric_summary={"cls": 0.5},
    )
    assert sorted(p.name for p in d.iterdir()) == sorted([PARAMS_FILE, SNAPSHOT_FILE, MANIFEST_FILE])
    manifest = json.loads((d / MANIFEST_FILE).read_text())
    assert manifest["step"] == 7 and manifest["epoch"] == 1
    assert manifest["metric_summary"] == {"cls": 0.5}
    assert manifest["config_hash"] == cfg.config_hash()

    ck = load_checkpoint(d)
    assert ck["config_text"] == cfg.to_text()
    assert ck["payload"]["iteration"] == 7


def test_load_model_weights_restores_parameters(tmp_path):
    cfg = tiny_config()
    torch.manual_seed(0)
    a = TrackerModel(cfg.tracker)
    save_checkpoint(tmp_path / "ck", {"model": a.state_dict()}, config_text=cfg.to_text(), step=0, epoch=0)
    torch.manual_seed(1)
    b = TrackerModel(cfg.tracker)
    assert not torch.equal(a.heads.cls.weight, b.heads.cls.weight)
    manifest = load_model_weights(b, tmp_path / "ck")
    assert manifest["step"] == 0
    for (name, pa), pb in zip(a.state_dict().items(), b.state_dict().values()):
        assert torch.equal(pa, pb), name


def test_missing_checkpoint_is_a_data_error(tmp_path):
    with pytest.raises(DataError, match="checkpoint not found"):
        load_checkpoint(tmp_path / "nope")


def test_checkpoint_without_weights(tmp_path):
    save_checkpoint(tmp_path / "ck", {"iteration": 1}, config_text="seed=0\n", step=1, epoch=0)
    with pytest.raises(DataError, match="no model weights"):
        load_model_weights(TrackerModel(tiny_config().tracker), tmp_path / "ck")
