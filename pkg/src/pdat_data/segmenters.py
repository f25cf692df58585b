"""Region proposers for unlabeled frames.

Two implementations share the :class:`Segmenter` protocol:

- :class:`ThresholdSegmenter` thresholds the deviation from the frame median and
  scores each connected component by its fill ratio (area / box area).
- :class:`OfflineMaskSegmenter` reads precomputed ``masks/<frame_index>.csv``
  files, so output of an external segmentation model can be plugged in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import cv2
import numpy as np

from pdat_common.errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentCandidate:
    frame_index: int
    box: tuple[float, float, float, float]
    confidence: float

    @property
    def area(self) -> float:
        return float(self.box[2] * self.box[3])

    @property
    def center(self) -> tuple[float, float]:
        x, y, w, h = self.box
        return (x + w / 2.0, y + h / 2.0)


@runtime_checkable
class Segmenter(Protocol):
    def propose(self, frame: np.ndarray, *, frame_index: int, sequence_id: str) -> list[SegmentCandidate]: ...


def _to_gray(frame: np.ndarray) -> np.ndarray:
    if frame.ndim == 3 and frame.shape[2] == 3:
        return cv2.cvtColor(frame, cv2.COLOR_RGB2GRAY)
    return frame.reshape(frame.shape[0], frame.shape[1])


class ThresholdSegmenter:
    def __init__(self, *, contrast: float = 40.0, polarity: str = "auto", min_pixels: int = 4) -> None:
        if polarity not in ("auto", "bright", "dark"):
            raise DataError(f"unknown polarity {polarity!r}")
        self.contrast = float(contrast)
        self.polarity = polarity
        self.min_pixels = int(min_pixels)

    def foreground(self, frame: np.ndarray) -> np.ndarray:
        gray = _to_gray(frame).astype(np.float32)
        dev = gray - float(np.median(gray))
        if self.polarity == "bright":
            mask = dev > self.contrast
        elif self.polarity == "dark":
            mask = -dev > self.contrast
        else:
            mask = np.abs(dev) > self.contrast
        return mask.astype(np.uint8)

    def propose(self, frame: np.ndarray, *, frame_index: int, sequence_id: str = "") -> list[SegmentCandidate]:
        n, _, stats, _ = cv2.connectedComponentsWithStats(self.foreground(frame), connectivity=8)
        out: list[SegmentCandidate] = []
        for label in range(1, n):
            x, y, w, h, area = (int(v) for v in stats[label])
            if area < self.min_pixels:
                continue
            out.append(
                SegmentCandidate(
                    frame_index=frame_index,
                    box=(float(x), float(y), float(w), float(h)),
                    confidence=float(area) / float(w * h),
                )
            )
        return out


class OfflineMaskSegmenter:
    """Reads ``<root>/<sequence_id>/masks/<frame_index>.csv`` rows ``x,y,w,h,confidence``."""

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)

    def mask_path(self, sequence_id: str, frame_index: int) -> Path:
        return self.root / sequence_id / "masks" / f"{frame_index}.csv"

    def propose(self, frame: np.ndarray, *, frame_index: int, sequence_id: str) -> list[SegmentCandidate]:
        p = self.mask_path(sequence_id, frame_index)
        if not p.exists() or not p.read_text(encoding="utf-8").strip():
            return []
        rows = np.loadtxt(p, delimiter=",", ndmin=2, dtype=np.float64)
        if rows.shape[1] != 5:
            raise DataError(f"{p}: expected 5 columns, got {rows.shape[1]}", details={"path": str(p)})
        return [
            SegmentCandidate(frame_index=frame_index, box=(r[0], r[1], r[2], r[3]), confidence=float(r[4]))
            for r in rows
        ]


def build_segmenter(kind: str, *, root: Path | str | None = None, contrast: float = 40.0, polarity: str = "auto") -> Segmenter:
    if kind == "threshold":
        return ThresholdSegmenter(contrast=contrast, polarity=polarity)
    if kind == "offline":
        if root is None:
            raise DataError("offline segmenter needs the dataset root holding masks/")
        return OfflineMaskSegmenter(root)
    raise DataError(f"unknown segmenter {kind!r}")


def write_masks(root: Path | str, sequence_id: str, frame_index: int, candidates: list[SegmentCandidate]) -> Path:
    """Write candidates in the offline mask format."""
    p = Path(root) / sequence_id / "masks" / f"{frame_index}.csv"
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(f"{v:.4f}" for v in (*c.box, c.confidence)) for c in candidates]
    p.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return p
