"""Stage descriptors for checkpoints: collection, on-disk cache, CSV export."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from pdat_adapt.descriptors import pyramid_descriptors
from pdat_adapt.memory import REFERENCE_STAGE, STAGES, DescriptorMemory
from pdat_common.errors import DataError
from pdat_config.settings import cache_dir
from pdat_data.batches import collate
from pdat_data.pairs import DomainSample
from pdat_tracker.tracker import TrackerModel

logger = logging.getLogger(__name__)


def cache_key(*parts: object) -> str:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8"))
    return h.hexdigest()[:24]


def select_samples(samples: list[DomainSample], n: int, seed: int) -> list[DomainSample]:
    """``n`` samples drawn without replacement, kept in dataset order; all of them when ``n`` is 0 or too large."""
    if n <= 0 or n >= len(samples):
        return list(samples)
    idx = np.sort(np.random.default_rng(seed).choice(len(samples), size=n, replace=False))
    return [samples[i] for i in idx]


@dataclass
class DescriptorSet:
    """Per-stage descriptor rows and the ids of the samples they came from."""

    sample_ids: list[str]
    stages: dict[int, np.ndarray]

    def __getitem__(self, stage: int) -> np.ndarray:
        return self.stages[stage]

    def __len__(self) -> int:
        return len(self.sample_ids)


@torch.no_grad()
def collect_descriptors(
    model: TrackerModel,
    samples: list[DomainSample],
    *,
    batch_size: int = 32,
    in_channels: int = 3,
) -> DescriptorSet:
    model.eval()
    device = next(model.parameters()).device
    parts: dict[int, list[np.ndarray]] = {m: [] for m in STAGES}
    for i in range(0, len(samples), batch_size):
        batch = collate(samples[i : i + batch_size], in_channels).to(device)
        z, x = model.pyramids(batch.template, batch.search)
        for m, v in pyramid_descriptors(z, x, STAGES).items():
            parts[m].append(v.cpu().numpy().astype(np.float64))
    return DescriptorSet(
        sample_ids=[s.sample_id for s in samples],
        stages={m: np.concatenate(v) if v else np.zeros((0, 0)) for m, v in parts.items()},
    )


def cached_descriptors(
    model: TrackerModel,
    samples: list[DomainSample],
    *,
    key: str,
    batch_size: int = 32,
    in_channels: int = 3,
) -> DescriptorSet:
    path = cache_dir() / f"descriptors-{key}.npz"
    if path.exists():
        with np.load(path, allow_pickle=False) as data:
            logger.debug("descriptor cache hit: %s", path)
            return DescriptorSet(
                sample_ids=[str(i) for i in data["sample_ids"]],
                stages={m: data[f"stage{m}"] for m in STAGES},
            )
    descs = collect_descriptors(model, samples, batch_size=batch_size, in_channels=in_channels)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + ".tmp.npz")
    np.savez(
        tmp,
        sample_ids=np.array(descs.sample_ids, dtype=str),
        **{f"stage{m}": v for m, v in descs.stages.items()},
    )
    tmp.replace(path)
    return descs


def export_embeddings(
    path: Path | str,
    descriptors: dict[str, DescriptorSet],
    memory: DescriptorMemory | None = None,
) -> int:
    """Write one stage-4 row per sample: ``sample_id, domain, voted_label, d0..``.

    ``voted_label`` is -1 without fitted clusters. Returns the number of data rows.
    """
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    rows = 0
    with p.open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        header_written = False
        for domain, descs in descriptors.items():
            ref = descs[REFERENCE_STAGE]
            if len(ref) == 0:
                continue
            if len(descs.sample_ids) != len(ref):
                raise DataError(
                    f"{domain}: {len(descs.sample_ids)} sample ids for {len(ref)} descriptor rows",
                    details={"domain": domain},
                )
            if not header_written:
                w.writerow(["sample_id", "domain", "voted_label"] + [f"d{i}" for i in range(ref.shape[1])])
                header_written = True
            if memory is not None and memory.fitted:
                labels = memory.label(descs.stages)
            else:
                labels = np.full(len(ref), -1, dtype=np.int64)
            for sid, lab, vec in zip(descs.sample_ids, labels, ref):
                w.writerow([sid, domain, int(lab)] + [f"{float(v):.8g}" for v in vec])
                rows += 1
    logger.info("exported %d embedding rows to %s", rows, p)
    return rows
