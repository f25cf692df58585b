"""Keyframe segmentation and template/search pair generation.

Crop geometry, in continuous pixel coordinates (pixel ``i`` covers ``[i, i+1)``):

- template: centered on the box, side ``context * sqrt(w * h)``, resized to ``T``;
- search: side ``template_side * S / T * f`` with scale jitter ``f``, centered on
  the box shifted by ``delta / a`` where ``a = S / search_side`` and ``delta`` is the
  translation jitter in search pixels. The box center therefore lands at
  ``S / 2 - delta`` in the search patch.

Regions outside the frame are filled with the per-channel frame mean.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence as Seq

import cv2
import numpy as np

from pdat_common.errors import DataError
from pdat_common.validation import clip_box, validate_box_in_frame
from pdat_config.run_config import AugmentConfig, RunConfig
from pdat_data.segmenters import SegmentCandidate, Segmenter
from pdat_data.sequences import DOMAINS, Sequence

logger = logging.getLogger(__name__)

PAIRS_FILE = "pairs.npz"
MANIFEST_FILE = "manifest.json"


@dataclass
class DomainSample:
    """One training unit. ``box`` is (cx, cy, w, h) in search-patch pixels."""

    sample_id: str
    template: np.ndarray
    search: np.ndarray
    box: np.ndarray | None
    domain: str

    def __post_init__(self) -> None:
        if self.domain not in DOMAINS:
            raise DataError(f"unknown domain {self.domain!r}", details={"sample": self.sample_id})
        t, s = self.template, self.search
        if t.ndim != 3 or s.ndim != 3 or t.shape[0] != t.shape[1] or s.shape[0] != s.shape[1]:
            raise DataError(f"{self.sample_id}: patches must be square (H, W, C)", details={"sample": self.sample_id})
        if s.shape[0] != 2 * t.shape[0] or s.shape[2] != t.shape[2]:
            raise DataError(
                f"{self.sample_id}: search side must be twice the template side",
                details={"template": list(t.shape), "search": list(s.shape)},
            )
        if self.box is None:
            if self.domain == "source":
                raise DataError(f"source sample {self.sample_id} has no box", details={"sample": self.sample_id})
            return
        self.box = np.asarray(self.box, dtype=np.float64).reshape(4)
        cx, cy, w, h = self.box
        validate_box_in_frame((cx - w / 2, cy - h / 2, w, h), s.shape[1], s.shape[0], what=f"{self.sample_id} box")

    @property
    def template_size(self) -> int:
        return int(self.template.shape[0])

    @property
    def search_size(self) -> int:
        return int(self.search.shape[0])


def sample_keyframes(seq: Sequence | int, stride: int = 10) -> list[int]:
    """Indices ``0, stride, 2*stride, ...`` below the frame count."""
    if stride < 1:
        raise DataError(f"keyframe stride must be >= 1, got {stride}")
    n = seq if isinstance(seq, int) else len(seq)
    return list(range(0, n, stride))


def segment_frame(
    frame: np.ndarray,
    segmenter: Segmenter,
    conf_threshold: float,
    *,
    min_area: float = 16.0,
    max_area_ratio: float = 0.5,
    frame_index: int = 0,
    sequence_id: str = "",
) -> list[SegmentCandidate]:
    """Candidates with confidence >= threshold and a plausible area, most confident first."""
    if not 0.0 <= conf_threshold <= 1.0:
        raise DataError(f"conf_threshold must lie in [0, 1], got {conf_threshold}")
    h, w = frame.shape[:2]
    try:
        raw = segmenter.propose(frame, frame_index=frame_index, sequence_id=sequence_id)
    except Exception as e:
        logger.warning("segmenter failed on %s frame %d: %s", sequence_id or "<frame>", frame_index, e)
        return []

    kept: list[SegmentCandidate] = []
    for c in raw:
        if not c.confidence >= conf_threshold:
            continue
        box = clip_box(c.box, w, h)
        area = box[2] * box[3]
        if area < min_area or area > max_area_ratio * w * h:
            continue
        kept.append(SegmentCandidate(frame_index=frame_index, box=box, confidence=float(c.confidence)))
    kept.sort(key=lambda c: (-c.confidence, c.box))
    return kept


def _pad_value(frame: np.ndarray) -> tuple[float, ...]:
    mean = frame.reshape(-1, frame.shape[2]).mean(axis=0)
    vals = [float(v) for v in mean]
    return tuple(vals + [0.0] * (4 - len(vals)))


def crop_patch(
    frame: np.ndarray,
    center: tuple[float, float],
    side: float,
    out_size: int,
    pad_value: tuple[float, ...] | None = None,
) -> np.ndarray:
    """Square crop of ``side`` frame pixels around ``center``, resized to ``out_size``."""
    a = out_size / side
    cx, cy = center
    m = np.array(
        [
            [a, 0.0, a * (0.5 - cx + side / 2.0) - 0.5],
            [0.0, a, a * (0.5 - cy + side / 2.0) - 0.5],
        ],
        dtype=np.float64,
    )
    pad = pad_value if pad_value is not None else _pad_value(frame)
    patch = cv2.warpAffine(
        frame,
        m,
        (out_size, out_size),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=pad,
    )
    if patch.ndim == 2:
        patch = patch[:, :, None]
    return patch


def _draw_jitter(aug: AugmentConfig, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    delta = rng.uniform(-aug.shift, aug.shift, size=2) if aug.shift > 0 else np.zeros(2)
    if aug.scale > 0:
        lim = math.log1p(aug.scale)
        factor = math.exp(rng.uniform(-lim, lim))
    else:
        factor = 1.0
    return delta, factor


def _search_crop(
    frame: np.ndarray,
    box: Seq[float],
    aug: AugmentConfig,
    rng: np.random.Generator,
    *,
    template_size: int,
    search_size: int,
    context: float,
) -> tuple[np.ndarray, np.ndarray]:
    x, y, w, h = (float(v) for v in box)
    cx, cy = x + w / 2.0, y + h / 2.0
    delta, factor = _draw_jitter(aug, rng)
    side = context * math.sqrt(w * h) * search_size / template_size * factor
    a = search_size / side
    patch = crop_patch(frame, (cx + delta[0] / a, cy + delta[1] / a), side, search_size)

    bw, bh = w * a, h * a
    bx = search_size / 2.0 - delta[0] - bw / 2.0
    by = search_size / 2.0 - delta[1] - bh / 2.0
    bx, by, bw, bh = clip_box((bx, by, bw, bh), search_size, search_size)
    return patch, np.array([bx + bw / 2.0, by + bh / 2.0, bw, bh], dtype=np.float64)


def _template_crop(frame: np.ndarray, box: Seq[float], *, template_size: int, context: float) -> np.ndarray:
    x, y, w, h = (float(v) for v in box)
    return crop_patch(frame, (x + w / 2.0, y + h / 2.0), context * math.sqrt(w * h), template_size)


def make_pair(
    frame: np.ndarray,
    candidate: SegmentCandidate,
    aug: AugmentConfig,
    rng_seed: int,
    *,
    template_size: int = 96,
    search_size: int = 192,
    context: float = 2.0,
    domain: str = "target",
    sample_id: str = "",
) -> DomainSample:
    """Template/search pair cut from one frame around a segmenter region."""
    h, w = frame.shape[:2]
    validate_box_in_frame(candidate.box, w, h, what="candidate box")
    rng = np.random.default_rng(rng_seed)
    template = _template_crop(frame, candidate.box, template_size=template_size, context=context)
    search, box = _search_crop(
        frame, candidate.box, aug, rng, template_size=template_size, search_size=search_size, context=context
    )
    return DomainSample(sample_id=sample_id, template=template, search=search, box=box, domain=domain)


def make_source_pair(
    seq: Sequence,
    i: int,
    j: int,
    aug: AugmentConfig,
    rng_seed: int,
    *,
    template_size: int = 96,
    search_size: int = 192,
    context: float = 2.0,
) -> DomainSample:
    """Template from frame ``i``, search from frame ``j``, each around its own ground-truth box."""
    if seq.boxes is None:
        raise DataError(f"sequence {seq.id} has no boxes", details={"sequence": seq.id})
    rng = np.random.default_rng(rng_seed)
    template = _template_crop(seq.frames[i], seq.boxes[i], template_size=template_size, context=context)
    search, box = _search_crop(
        seq.frames[j], seq.boxes[j], aug, rng, template_size=template_size, search_size=search_size, context=context
    )
    return DomainSample(
        sample_id=f"{seq.id}/{i:06d}-{j:06d}", template=template, search=search, box=box, domain="source"
    )


def pair_seed(*keys: int) -> int:
    """Stable per-pair seed; independent of worker scheduling."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def _target_pairs_for(seq_idx: int, seq: Sequence, segmenter: Segmenter, cfg: RunConfig, seed: int) -> tuple[list[DomainSample], int, int]:
    d = cfg.data
    out: list[DomainSample] = []
    frames = sample_keyframes(seq, d.keyframe_stride)
    kept = 0
    for f in frames:
        cands = segment_frame(
            seq.frames[f],
            segmenter,
            d.conf_threshold,
            min_area=d.min_area,
            max_area_ratio=d.max_area_ratio,
            frame_index=f,
            sequence_id=seq.id,
        )
        kept += len(cands)
        for k, cand in enumerate(cands):
            out.append(
                make_pair(
                    seq.frames[f],
                    cand,
                    d.aug,
                    pair_seed(seed, seq_idx, f, k),
                    template_size=d.template_size,
                    search_size=d.search_size,
                    context=d.context,
                    domain="target",
                    sample_id=f"{seq.id}/{f:06d}/{k}",
                )
            )
    return out, len(frames), kept


def generate_target_pairs(
    sequences: list[Sequence],
    segmenter: Segmenter,
    cfg: RunConfig,
    *,
    seed: int | None = None,
    workers: int | None = None,
) -> tuple[list[DomainSample], dict]:
    """Pseudo-labeled pairs from every keyframe region, plus a preprocessing manifest."""
    seed = cfg.seed if seed is None else seed
    workers = max(1, cfg.data.workers if workers is None else workers)

    def job(item: tuple[int, Sequence]):
        return _target_pairs_for(item[0], item[1], segmenter, cfg, seed)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(job, enumerate(sequences)))

    samples = [s for r in results for s in r[0]]
    if cfg.data.max_target_pairs > 0:
        samples = samples[: cfg.data.max_target_pairs]
    manifest = {
        "pairs": len(samples),
        "frames_scanned": sum(r[1] for r in results),
        "candidates_kept": sum(r[2] for r in results),
        "threshold": cfg.data.conf_threshold,
        "stride": cfg.data.keyframe_stride,
        "sequences": len(sequences),
        "seed": seed,
    }
    logger.info(
        "generated %d target pairs from %d keyframes (%d candidates kept)",
        manifest["pairs"], manifest["frames_scanned"], manifest["candidates_kept"],
    )
    return samples, manifest


def _source_pairs_for(seq_idx: int, seq: Sequence, cfg: RunConfig, seed: int) -> list[DomainSample]:
    d = cfg.data
    n = len(seq)
    out: list[DomainSample] = []
    for i in range(0, n, d.source_stride):
        rng = np.random.default_rng(pair_seed(seed, seq_idx, i))
        gap = int(rng.integers(-d.source_frame_gap, d.source_frame_gap + 1)) if d.source_frame_gap > 0 else 0
        j = min(max(i + gap, 0), n - 1)
        out.append(
            make_source_pair(
                seq,
                i,
                j,
                d.aug,
                pair_seed(seed, seq_idx, i, j),
                template_size=d.template_size,
                search_size=d.search_size,
                context=d.context,
            )
        )
    return out


def generate_source_pairs(
    sequences: list[Sequence],
    cfg: RunConfig,
    *,
    seed: int | None = None,
    workers: int | None = None,
) -> list[DomainSample]:
    seed = cfg.seed if seed is None else seed
    workers = max(1, cfg.data.workers if workers is None else workers)
    for seq in sequences:
        if seq.boxes is None:
            raise DataError(f"source sequence {seq.id} has no boxes", details={"sequence": seq.id})

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda item: _source_pairs_for(item[0], item[1], cfg, seed), enumerate(sequences)))
    samples = [s for r in results for s in r]
    logger.info("generated %d source pairs from %d sequences", len(samples), len(sequences))
    return samples


def save_pairs(out_dir: Path | str, samples: list[DomainSample], manifest: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    boxes = np.array(
        [s.box if s.box is not None else np.full(4, np.nan) for s in samples], dtype=np.float64
    ).reshape(-1, 4)
    np.savez_compressed(
        out / PAIRS_FILE,
        templates=np.stack([s.template for s in samples]) if samples else np.zeros((0, 1, 1, 1), np.uint8),
        searches=np.stack([s.search for s in samples]) if samples else np.zeros((0, 2, 2, 1), np.uint8),
        boxes=boxes,
        ids=np.array([s.sample_id for s in samples], dtype=str),
        domains=np.array([s.domain for s in samples], dtype=str),
    )
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_pairs(pairs_dir: Path | str) -> list[DomainSample]:
    p = Path(pairs_dir) / PAIRS_FILE
    if not p.exists():
        raise DataError(f"no preprocessed pairs at {p}", details={"path": str(p)})
    with np.load(p, allow_pickle=False) as z:
        templates, searches, boxes = z["templates"], z["searches"], z["boxes"]
        ids, domains = z["ids"], z["domains"]
    return [
        DomainSample(
            sample_id=str(ids[i]),
            template=templates[i],
            search=searches[i],
            box=None if np.isnan(boxes[i]).any() else boxes[i],
            domain=str(domains[i]),
        )
        for i in range(len(ids))
    ]
