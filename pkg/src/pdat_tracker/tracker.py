from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from pdat_common.errors import DataError
from pdat_common.validation import clip_box, validate_box_in_frame
from pdat_config.run_config import DataConfig, TrackerConfig
from pdat_data.batches import patches_to_tensor
from pdat_data.pairs import crop_patch
from pdat_data.sequences import Sequence
from pdat_tracker.backbone import Backbone, FeaturePyramid, extract_pyramid
from pdat_tracker.heads import HeadOutput, Heads, correlate, forward_heads, grid_points

logger = logging.getLogger(__name__)


class TrackerModel(nn.Module):
    """Siamese anchor-free tracker: shared backbone, depthwise correlation, heads."""

    def __init__(self, tracker: TrackerConfig = TrackerConfig(), *, in_channels: int = 3) -> None:
        super().__init__()
        self.head_stage = tracker.head_stage
        self.stride = 2 ** tracker.head_stage
        self.backbone = Backbone(tracker.widths, in_channels=in_channels)
        self.heads = Heads(tracker.widths[tracker.head_stage - 1], width=tracker.head_width, stride=self.stride)

    def pyramids(self, template: torch.Tensor, search: torch.Tensor) -> tuple[FeaturePyramid, FeaturePyramid]:
        return (
            extract_pyramid(template, self.backbone, kind="template"),
            extract_pyramid(search, self.backbone, kind="search"),
        )

    def head_forward(self, z_feat: torch.Tensor, search: torch.Tensor) -> HeadOutput:
        x = extract_pyramid(search, self.backbone, kind="search")
        return forward_heads(correlate(z_feat, x.stage(self.head_stage)), self.heads)

    def embed_template(self, template: torch.Tensor) -> torch.Tensor:
        return extract_pyramid(template, self.backbone, kind="template").stage(self.head_stage)

    def forward(self, template: torch.Tensor, search: torch.Tensor) -> tuple[HeadOutput, FeaturePyramid, FeaturePyramid]:
        z, x = self.pyramids(template, search)
        out = forward_heads(correlate(z.stage(self.head_stage), x.stage(self.head_stage)), self.heads)
        return out, z, x


@dataclass
class TrackResult:
    frame_index: int
    box: tuple[float, float, float, float]
    score: float
    flags: dict = field(default_factory=dict)


def hann_window(n: int) -> np.ndarray:
    w = np.hanning(n + 2)[1:-1] if n > 1 else np.ones(1)
    return np.outer(w, w)


def score_map(out: HeadOutput, window_influence: float) -> np.ndarray:
    """sigmoid(cls) * sigmoid(cen), blended with a Hanning window: ``(1 - w) + w * hann``."""
    cls = torch.sigmoid(out.cls[0, 0]).detach().cpu().numpy().astype(np.float64)
    cen = torch.sigmoid(out.cen[0, 0]).detach().cpu().numpy().astype(np.float64)
    window = (1.0 - window_influence) + window_influence * hann_window(cls.shape[0])
    return cls * cen * window


def decode_box(
    out: HeadOutput,
    scores: np.ndarray,
    *,
    stride: int,
    search_size: int,
) -> tuple[tuple[float, float, float, float], float]:
    """Box (x1, y1, w, h) in search-patch pixels at the best-scoring cell."""
    n = scores.shape[0]
    r, c = np.unravel_index(int(np.argmax(scores)), scores.shape)
    pts = grid_points(n, stride, search_size, dtype=torch.float64).numpy()
    l, t, rr, b = (float(v) for v in out.reg[0, :, r, c].detach().cpu().numpy())
    px, py = float(pts[c]), float(pts[r])
    return (px - l, py - t, l + rr, t + b), float(scores[r, c])


@torch.no_grad()
def track_sequence(
    seq: Sequence,
    init_box: tuple[float, float, float, float],
    model: TrackerModel,
    *,
    data: DataConfig = DataConfig(),
    tracker: TrackerConfig = TrackerConfig(),
) -> list[TrackResult]:
    """One-pass tracking from ``init_box`` on frame 0; boxes are (x, y, w, h), 0-based."""
    fw, fh = seq.frame_size
    validate_box_in_frame(init_box, fw, fh, what="init_box")
    if len(seq) == 0:
        raise DataError(f"sequence {seq.id} is empty")

    model.eval()
    T, S = data.template_size, data.search_size
    in_channels = model.backbone.in_channels
    box = tuple(float(v) for v in init_box)

    x, y, w, h = box
    template = crop_patch(seq.frames[0], (x + w / 2, y + h / 2), data.context * math.sqrt(w * h), T)
    z_feat = model.embed_template(patches_to_tensor([template], in_channels))

    results = [TrackResult(frame_index=0, box=box, score=1.0)]
    for i in range(1, len(seq)):
        x, y, w, h = box
        cx, cy = x + w / 2, y + h / 2
        side = data.context * math.sqrt(w * h) * S / T
        a = S / side
        search = crop_patch(seq.frames[i], (cx, cy), side, S)
        out = model.head_forward(z_feat, patches_to_tensor([search], in_channels))
        scores = score_map(out, tracker.window_influence)
        (bx, by, bw, bh), score = decode_box(out, scores, stride=model.stride, search_size=S)

        # search-patch pixels -> frame pixels
        fx = cx + (bx - S / 2) / a
        fy = cy + (by - S / 2) / a
        cand = clip_box((fx, fy, bw / a, bh / a), fw, fh)
        flags: dict = {}
        if cand[2] < 1.0 or cand[3] < 1.0:
            flags["degenerate_box"] = True
            logger.debug("%s frame %d: degenerate box %s, keeping previous", seq.id, i, cand)
        else:
            box = cand
        results.append(TrackResult(frame_index=i, box=box, score=score, flags=flags))
    return results
