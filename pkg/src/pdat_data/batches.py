from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Iterator

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset, Sampler

from pdat_common.errors import DataError
from pdat_data.pairs import DomainSample, pair_seed


class PairDataset(Dataset):
    """Indexable view over DomainSamples of a single domain."""

    def __init__(self, samples: list[DomainSample], domain: str) -> None:
        bad = [s.sample_id for s in samples if s.domain != domain]
        if bad:
            raise DataError(f"{len(bad)} samples are not {domain}", details={"first": bad[0]})
        self.samples = list(samples)
        self.domain = domain

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, idx: int) -> DomainSample:
        return self.samples[idx]


@dataclass
class Batch:
    """Tensors in (B, C, H, W), scaled to [0, 1]. ``boxes`` is (B, 4) cx, cy, w, h."""

    ids: list[str]
    template: torch.Tensor
    search: torch.Tensor
    boxes: torch.Tensor | None
    domain: str

    def __len__(self) -> int:
        return len(self.ids)

    def to(self, device: torch.device | str) -> "Batch":
        return Batch(
            ids=self.ids,
            template=self.template.to(device),
            search=self.search.to(device),
            boxes=None if self.boxes is None else self.boxes.to(device),
            domain=self.domain,
        )


def patches_to_tensor(patches: list[np.ndarray], in_channels: int) -> torch.Tensor:
    arr = np.stack(patches).astype(np.float32) / 255.0
    c = arr.shape[-1]
    if c != in_channels:
        if in_channels == 1:
            arr = arr.mean(axis=-1, keepdims=True)
        elif c == 1:
            arr = np.repeat(arr, in_channels, axis=-1)
        else:
            raise DataError(f"cannot map {c} channels to {in_channels}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def collate(samples: list[DomainSample], in_channels: int = 3) -> Batch:
    if not samples:
        raise DataError("cannot collate an empty batch")
    domain = samples[0].domain
    if any(s.domain != domain for s in samples):
        raise DataError("a batch must hold a single domain")
    boxes = None
    if all(s.box is not None for s in samples):
        boxes = torch.from_numpy(np.stack([s.box for s in samples]).astype(np.float32))
    return Batch(
        ids=[s.sample_id for s in samples],
        template=patches_to_tensor([s.template for s in samples], in_channels),
        search=patches_to_tensor([s.search for s in samples], in_channels),
        boxes=boxes,
        domain=domain,
    )


class CyclicEpochSampler(Sampler[int]):
    """Seeded permutation of ``range(n)`` repeated to ``length`` indices.

    The order depends only on ``(seed, stream, epoch)``; call :meth:`set_epoch`
    before iterating, so a resumed run replays the same batches.
    """

    def __init__(self, n: int, length: int, *, seed: int, stream: int) -> None:
        self.n = n
        self.length = length
        self.seed = seed
        self.stream = stream
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = int(epoch)

    def __len__(self) -> int:
        return self.length

    def __iter__(self) -> Iterator[int]:
        g = torch.Generator().manual_seed(pair_seed(self.seed, self.epoch, self.stream))
        order = torch.randperm(self.n, generator=g)
        reps = math.ceil(self.length / self.n)
        return iter(order.repeat(reps)[: self.length].tolist())


class MixedBatchStream:
    """Half source, half target per step, one DataLoader per domain.

    An epoch has ``ceil(max(n_s, n_t) / half)`` steps and the shorter dataset
    cycles through its permutation.
    """

    def __init__(
        self,
        source: PairDataset,
        target: PairDataset | None,
        batch_size: int,
        *,
        seed: int = 0,
        in_channels: int = 3,
        workers: int = 0,
    ) -> None:
        if batch_size < 2 or batch_size % 2:
            raise DataError(f"batch_size must be even and >= 2, got {batch_size}")
        if len(source) == 0:
            raise DataError("source dataset is empty")
        if target is not None and len(target) == 0:
            raise DataError("target dataset is empty")
        self.source = source
        self.target = target
        self.half = batch_size // 2
        self.seed = int(seed)
        self.in_channels = in_channels
        # one worker means in-process loading
        self.workers = workers if workers > 1 else 0
        self._loaders = [self._loader(source, 0)]
        if target is not None:
            self._loaders.append(self._loader(target, 1))

    @property
    def steps_per_epoch(self) -> int:
        n = max(len(self.source), len(self.target) if self.target is not None else 0)
        return math.ceil(n / self.half)

    def _loader(self, ds: PairDataset, stream: int) -> DataLoader:
        sampler = CyclicEpochSampler(len(ds), self.steps_per_epoch * self.half, seed=self.seed, stream=stream)
        return DataLoader(
            ds,
            batch_size=self.half,
            sampler=sampler,
            collate_fn=partial(collate, in_channels=self.in_channels),
            num_workers=self.workers,
            persistent_workers=self.workers > 0,
        )

    def epoch(self, epoch: int) -> Iterator[tuple[Batch, Batch | None]]:
        for loader in self._loaders:
            loader.sampler.set_epoch(epoch)
        if self.target is None:
            for src in self._loaders[0]:
                yield src, None
            return
        yield from zip(self._loaders[0], self._loaders[1])


def _iterate(stream: MixedBatchStream, epochs: int | None) -> Iterator[tuple[Batch, Batch]]:
    e = 0
    while epochs is None or e < epochs:
        for src, tgt in stream.epoch(e):
            yield src, tgt  # type: ignore[misc]
        e += 1


def batch_iterator(
    source: PairDataset,
    target: PairDataset,
    batch_size: int,
    *,
    seed: int = 0,
    epochs: int | None = None,
    in_channels: int = 3,
) -> Iterator[tuple[Batch, Batch]]:
    """Endless (or ``epochs``-long) stream of (source batch, target batch).

    Datasets are checked here, before the first batch is requested.
    """
    if target is None:
        raise DataError("target dataset is required")
    stream = MixedBatchStream(source, target, batch_size, seed=seed, in_channels=in_channels)
    return _iterate(stream, epochs)
