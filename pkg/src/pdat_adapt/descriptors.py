from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from pdat_tracker.backbone import NUM_STAGES, FeaturePyramid
from pdat_tracker.heads import correlate


@dataclass(frozen=True)
class CorrelationDescriptor:
    stage: int
    vector: np.ndarray
    domain: str
    sample_id: str
    zero_response: bool = False


def correlation_descriptor(z_m: torch.Tensor, x_m: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Depthwise correlation, spatial mean, L2 normalization.

    Returns ``(vectors (B, C), zero_mask (B,))``; an all-zero response yields a
    zero vector with its mask entry set. Gradients flow to both inputs.
    """
    pooled = correlate(z_m, x_m).mean(dim=(-2, -1))
    if pooled.dim() == 1:
        pooled = pooled[None]
    norm = pooled.norm(dim=1, keepdim=True)
    vec = pooled / norm.clamp_min(torch.finfo(pooled.dtype).tiny)
    zero = norm.squeeze(1) == 0
    return vec, zero


def pyramid_descriptors(z: FeaturePyramid, x: FeaturePyramid, stages: tuple[int, ...] = (1, 2, 3, 4)) -> dict[int, torch.Tensor]:
    return {m: correlation_descriptor(z.stage(m), x.stage(m))[0] for m in stages if 1 <= m <= NUM_STAGES}


def to_records(
    vectors: torch.Tensor,
    *,
    stage: int,
    domain: str,
    sample_ids: list[str],
) -> list[CorrelationDescriptor]:
    arr = vectors.detach().cpu().numpy().astype(np.float64)
    return [
        CorrelationDescriptor(
            stage=stage,
            vector=arr[i],
            domain=domain,
            sample_id=sample_ids[i],
            zero_response=bool(not np.any(arr[i])),
        )
        for i in range(len(sample_ids))
    ]
