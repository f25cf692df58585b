"""Synthetic two-domain corpus: moving bright ellipses.

Source sequences are tinted ellipses on a dark, noisy background and carry
ground truth for ellipse 0. Target sequences are the intensity-inverted,
Gaussian-blurred grayscale rendering of the same kind of scene (a stand-in for
thermal imagery); they are written without ground truth, while a separate
``target_eval`` split keeps its boxes for evaluation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from pdat_data.sequences import Sequence, write_sequence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorpusSpec:
    sequences: int = 4
    eval_sequences: int = 2
    frames: int = 40
    size: int = 128
    blobs: int = 3
    seed: int = 0


def _ellipse_tracks(rng: np.random.Generator, size: int, n_blobs: int) -> list[dict]:
    band = size / n_blobs
    tracks = []
    for k in range(n_blobs):
        ax = int(rng.integers(6, 10))
        ay = max(5, int(round(ax * rng.uniform(0.7, 1.0))))
        amp_x = max(0.0, band / 2.0 - ax - 3.0)
        amp_y = max(0.0, size / 2.0 - ay - 4.0)
        tracks.append(
            {
                "axes": (ax, ay),
                "base": (band * (k + 0.5), size / 2.0),
                "amp": (amp_x * rng.uniform(0.3, 1.0), amp_y * rng.uniform(0.3, 1.0)),
                "freq": (rng.uniform(0.05, 0.15), rng.uniform(0.05, 0.15)),
                "phase": (rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi)),
                "color": tuple(int(v) for v in rng.integers(170, 256, size=3)),
            }
        )
    return tracks


def _center(track: dict, t: int) -> tuple[int, int]:
    bx, by = track["base"]
    ax, ay = track["amp"]
    fx, fy = track["freq"]
    px, py = track["phase"]
    return (int(round(bx + ax * math.sin(fx * t + px))), int(round(by + ay * math.sin(fy * t + py))))


def render_sequence(
    seq_id: str,
    rng: np.random.Generator,
    *,
    frames: int,
    size: int,
    blobs: int,
    thermal: bool = False,
) -> Sequence:
    """Render one sequence; the box of ellipse 0 is always returned."""
    tracks = _ellipse_tracks(rng, size, blobs)
    imgs: list[np.ndarray] = []
    boxes: list[tuple[float, float, float, float]] = []
    for t in range(frames):
        noise = rng.integers(-8, 9, size=(size, size, 1))
        img = np.clip(30 + noise, 0, 255).astype(np.uint8).repeat(3, axis=2)
        for k, tr in enumerate(tracks):
            cx, cy = _center(tr, t)
            ax, ay = tr["axes"]
            cv2.ellipse(img, (cx, cy), (ax, ay), 0.0, 0.0, 360.0, tr["color"], thickness=-1, lineType=cv2.LINE_8)
            if k == 0:
                boxes.append((float(cx - ax), float(cy - ay), float(2 * ax + 1), float(2 * ay + 1)))
        if thermal:
            gray = 255 - cv2.cvtColor(img, cv2.COLOR_RGB2GRAY)
            gray = cv2.GaussianBlur(gray, (5, 5), 1.0)
            img = np.repeat(gray[:, :, None], 3, axis=2)
        imgs.append(img)
    return Sequence(
        id=seq_id,
        frames=imgs,
        boxes=np.asarray(boxes, dtype=np.float64),
        domain="target" if thermal else "source",
    )


def make_synthetic_corpus(root: Path | str, spec: CorpusSpec = CorpusSpec()) -> dict[str, Path]:
    """Write ``source/``, ``target/`` and ``target_eval/`` under ``root``."""
    root = Path(root)
    out = {"source": root / "source", "target": root / "target", "target_eval": root / "target_eval"}
    splits = (
        ("source", spec.sequences, False, True),
        ("target", spec.sequences, True, False),
        ("target_eval", spec.eval_sequences, True, True),
    )
    for split_idx, (split, count, thermal, with_boxes) in enumerate(splits):
        out[split].mkdir(parents=True, exist_ok=True)
        for i in range(count):
            rng = np.random.default_rng([spec.seed, split_idx, i])
            seq = render_sequence(
                f"{split}_{i:03d}", rng, frames=spec.frames, size=spec.size, blobs=spec.blobs, thermal=thermal
            )
            write_sequence(out[split], seq, with_boxes=with_boxes)
    logger.info("wrote synthetic corpus under %s (%d sequences per training split)", root, spec.sequences)
    return out
