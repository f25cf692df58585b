"""Checkpoint directories: ``params.bin``, ``config.snapshot``, ``manifest.json``."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any

import torch

from pdat_common.errors import DataError

logger = logging.getLogger(__name__)

PARAMS_FILE = "params.bin"
SNAPSHOT_FILE = "config.snapshot"
MANIFEST_FILE = "manifest.json"


def _atomic_write_bytes(path: Path, write) -> None:
    tmp = path.with_name(path.name + ".tmp")
    write(tmp)
    os.replace(tmp, path)


def save_checkpoint(
    ckpt_dir: Path | str,
    payload: dict[str, Any],
    *,
    config_text: str,
    step: int,
    epoch: int,
    metric_summary: dict[str, float] | None = None,
) -> Path:
    """Write a checkpoint directory; any I/O failure propagates to the caller."""
    d = Path(ckpt_dir)
    d.mkdir(parents=True, exist_ok=True)
    _atomic_write_bytes(d / PARAMS_FILE, lambda p: torch.save(payload, p))
    _atomic_write_bytes(d / SNAPSHOT_FILE, lambda p: p.write_text(config_text, encoding="utf-8"))
    manifest = {
        "step": int(step),
        "epoch": int(epoch),
        "metric_summary": dict(metric_summary or {}),
        "config_hash": hashlib.sha256(config_text.encode("utf-8")).hexdigest()[:16],
    }
    _atomic_write_bytes(
        d / MANIFEST_FILE,
        lambda p: p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"),
    )
    logger.info("checkpoint written: %s (step %d, epoch %d)", d, step, epoch)
    return d


def load_checkpoint(ckpt_dir: Path | str, *, map_location: str | torch.device = "cpu") -> dict[str, Any]:
    """Return ``{"payload", "manifest", "config_text"}`` for a checkpoint directory."""
    d = Path(ckpt_dir)
    params = d / PARAMS_FILE
    if not params.exists():
        raise DataError(f"checkpoint not found: {params}", details={"path": str(d)})
    # payload holds numpy arrays (memory banks, centroids) next to tensors
    payload = torch.load(params, map_location=map_location, weights_only=False)
    manifest = json.loads((d / MANIFEST_FILE).read_text(encoding="utf-8")) if (d / MANIFEST_FILE).exists() else {}
    config_text = (d / SNAPSHOT_FILE).read_text(encoding="utf-8") if (d / SNAPSHOT_FILE).exists() else ""
    return {"payload": payload, "manifest": manifest, "config_text": config_text}


def load_model_weights(model: torch.nn.Module, ckpt_dir: Path | str) -> dict[str, Any]:
    """Load only tracker weights (backbone + heads) into ``model``; returns the manifest."""
    ck = load_checkpoint(ckpt_dir)
    state = ck["payload"].get("model")
    if state is None:
        raise DataError(f"checkpoint {ckpt_dir} carries no model weights", details={"path": str(ckpt_dir)})
    model.load_state_dict(state)
    return ck["manifest"]
