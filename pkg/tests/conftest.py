from __future__ import annotations

import pytest
import torch


@pytest.fixture(autouse=True)
def _hermetic_dirs(tmp_path, monkeypatch):
    """Telemetry, descriptor cache and default run dirs go under tmp_path."""
    monkeypatch.setenv("PDAT_TELEMETRY_DIR", str(tmp_path / "telemetry"))
    monkeypatch.setenv("PDAT_CACHE", str(tmp_path / "cache"))
    monkeypatch.setenv("PDAT_ARTIFACTS_DIR", str(tmp_path / "artifacts"))
    monkeypatch.delenv("PDAT_DISABLE_TELEMETRY", raising=False)


@pytest.fixture
def restore_torch_globals():
    """Deterministic mode flips process-wide torch switches; put them back afterwards."""
    threads = torch.get_num_threads()
    deterministic = torch.are_deterministic_algorithms_enabled()
    yield
    torch.use_deterministic_algorithms(deterministic)
    torch.set_num_threads(threads)
