from __future__ import annotations

import torch


def poly_lr(base: float, iteration: int, max_iter: int, power: float = 0.8) -> float:
    """``base * (1 - iteration / max_iter) ** power``; 0 at and beyond ``max_iter``."""
    if max_iter <= 0:
        raise ValueError(f"max_iter must be positive, got {max_iter}")
    if iteration >= max_iter:
        return 0.0
    it = max(int(iteration), 0)
    return base * (1.0 - it / max_iter) ** power


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr
