"""Sequence loading and writing.

Layout on disk::

    <root>/<seq_id>/img/000001.png ...
    <root>/<seq_id>/groundtruth_rect.txt   # x,y,w,h per frame, 1-based origin
    <root>/<seq_id>/masks/<frame_index>.csv  # optional offline segmenter output

Boxes are held 0-based in memory.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import cv2
import numpy as np

from pdat_common.errors import DataError
from pdat_common.validation import validate_box_in_frame

logger = logging.getLogger(__name__)

Domain = Literal["source", "target"]
DOMAINS: tuple[str, ...] = ("source", "target")

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp")
GROUNDTRUTH_FILE = "groundtruth_rect.txt"


@dataclass
class Sequence:
    """An ordered image sequence; frames are (H, W, C) uint8 arrays."""

    id: str
    frames: list[np.ndarray]
    boxes: np.ndarray | None
    domain: str

    def __post_init__(self) -> None:
        if self.domain not in DOMAINS:
            raise DataError(f"unknown domain {self.domain!r}", details={"sequence": self.id})
        if not self.frames:
            raise DataError(f"sequence {self.id} has no frames", details={"sequence": self.id})
        frames = [_as_hwc(f) for f in self.frames]
        shape = frames[0].shape
        for i, f in enumerate(frames):
            if f.shape != shape:
                raise DataError(
                    f"sequence {self.id}: frame {i} has shape {f.shape}, expected {shape}",
                    details={"sequence": self.id, "frame": i},
                )
        self.frames = frames
        if self.boxes is not None:
            boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
            if len(boxes) != len(frames):
                raise DataError(
                    f"annotation count mismatch in {self.id}: {len(boxes)} boxes for {len(frames)} frames",
                    details={"sequence": self.id},
                )
            h, w = shape[:2]
            for i, b in enumerate(boxes):
                validate_box_in_frame(b, w, h, what=f"{self.id} box {i}")
            self.boxes = boxes

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_size(self) -> tuple[int, int]:
        h, w = self.frames[0].shape[:2]
        return w, h

    @property
    def has_boxes(self) -> bool:
        return self.boxes is not None


def _as_hwc(frame: np.ndarray) -> np.ndarray:
    arr = np.asarray(frame)
    if arr.dtype != np.uint8:
        raise DataError(f"frames must be 8-bit, got {arr.dtype}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise DataError(f"frames must be grayscale or 3-channel, got shape {arr.shape}")
    return arr


def _read_frame(path: Path) -> np.ndarray | None:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        return None
    if img.dtype != np.uint8:
        img = cv2.convertScaleAbs(img, alpha=255.0 / max(float(img.max()), 1.0))
    if img.ndim == 3 and img.shape[2] == 4:
        img = img[:, :, :3]
    if img.ndim == 3 and img.shape[2] == 3:
        img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    return _as_hwc(img)


def read_groundtruth(path: Path) -> np.ndarray:
    """Parse ``x,y,w,h`` lines (comma, tab or space separated) into 0-based boxes."""
    rows: list[list[float]] = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p for p in re.split(r"[,\t ]+", line) if p]
        if len(parts) != 4:
            raise DataError(f"{path}:{n}: expected 4 values, got {len(parts)}", details={"path": str(path)})
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise DataError(f"{path}:{n}: non-numeric box {line!r}", details={"path": str(path)})
    boxes = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    boxes[:, :2] -= 1.0
    return boxes


def _frame_paths(seq_dir: Path) -> list[Path]:
    img_dir = seq_dir / "img"
    if not img_dir.is_dir():
        return []
    return sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_sequence(seq_dir: Path, domain: str) -> Sequence:
    paths = _frame_paths(seq_dir)
    if not paths:
        raise DataError(f"sequence {seq_dir.name} has no frames under img/", details={"sequence": seq_dir.name})

    gt_path = seq_dir / GROUNDTRUTH_FILE
    boxes: np.ndarray | None = None
    if gt_path.exists():
        boxes = read_groundtruth(gt_path)
        if len(boxes) != len(paths):
            raise DataError(
                f"annotation count mismatch in {seq_dir.name}: {len(boxes)} boxes for {len(paths)} frames",
                details={"sequence": seq_dir.name},
            )
    elif domain == "source":
        raise DataError(f"source sequence {seq_dir.name} is missing {GROUNDTRUTH_FILE}", details={"sequence": seq_dir.name})

    frames: list[np.ndarray] = []
    keep: list[int] = []
    for i, p in enumerate(paths):
        img = _read_frame(p)
        if img is None:
            logger.warning("skipping unreadable frame %s", p)
            continue
        frames.append(img)
        keep.append(i)

    if not frames:
        raise DataError(f"sequence {seq_dir.name} has no readable frames", details={"sequence": seq_dir.name})
    if boxes is not None:
        boxes = boxes[keep]
    return Sequence(id=seq_dir.name, frames=frames, boxes=boxes, domain=domain)


def load_dataset(root_path: Path | str, domain: str) -> list[Sequence]:
    """Load every ``<root>/<seq_id>`` directory, in sorted order."""
    if domain not in DOMAINS:
        raise DataError(f"unknown domain {domain!r}")
    root = Path(root_path)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}", details={"path": str(root)})

    seqs = [load_sequence(d, domain) for d in sorted(root.iterdir()) if d.is_dir()]
    logger.info("loaded %d %s sequences from %s", len(seqs), domain, root)
    return seqs


def write_sequence(root: Path | str, seq: Sequence, *, with_boxes: bool = True) -> Path:
    """Write ``seq`` in the dataset layout (PNG frames, 1-based groundtruth)."""
    seq_dir = Path(root) / seq.id
    img_dir = seq_dir / "img"
    img_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, start=1):
        img = frame[:, :, 0] if frame.shape[2] == 1 else cv2.cvtColor(frame, cv2.COLOR_RGB2BGR)
        if not cv2.imwrite(str(img_dir / f"{i:06d}.png"), img):
            raise DataError(f"failed to write frame {i} of {seq.id}", details={"sequence": seq.id})
    if with_boxes and seq.boxes is not None:
        lines = [",".join(f"{v:.4f}" for v in (b[0] + 1.0, b[1] + 1.0, b[2], b[3])) for b in seq.boxes]
        (seq_dir / GROUNDTRUTH_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return seq_dir
