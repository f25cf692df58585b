from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch
from torch import nn

from pdat_adapt.global_alignment import build_discriminators
from pdat_adapt.memory import DescriptorMemory
from pdat_config.run_config import RunConfig
from pdat_tracker.checkpoint import load_model_weights
from pdat_tracker.tracker import TrackerModel

logger = logging.getLogger(__name__)


@dataclass
class TrainState:
    model: TrackerModel
    opt_G: torch.optim.Optimizer
    discriminators: nn.ModuleDict | None = None
    opt_D: torch.optim.Optimizer | None = None
    opt_sub: torch.optim.Optimizer | None = None
    memory: DescriptorMemory | None = None
    iteration: int = 0
    epoch: int = 0
    max_iter: int = 1
    last_refit: dict = field(default_factory=dict)

    def state_dict(self) -> dict:
        return {
            "model": self.model.state_dict(),
            "opt_G": self.opt_G.state_dict(),
            "discriminators": None if self.discriminators is None else self.discriminators.state_dict(),
            "opt_D": None if self.opt_D is None else self.opt_D.state_dict(),
            "opt_sub": None if self.opt_sub is None else self.opt_sub.state_dict(),
            "memory": None if self.memory is None else self.memory.state_dict(),
            "iteration": self.iteration,
            "epoch": self.epoch,
            "max_iter": self.max_iter,
            "last_refit": dict(self.last_refit),
        }

    def load_state_dict(self, state: dict) -> None:
        self.model.load_state_dict(state["model"])
        self.opt_G.load_state_dict(state["opt_G"])
        for attr in ("discriminators", "opt_D", "opt_sub", "memory"):
            obj, saved = getattr(self, attr), state.get(attr)
            if obj is not None and saved is not None:
                obj.load_state_dict(saved)
        self.iteration = int(state["iteration"])
        self.epoch = int(state["epoch"])
        self.max_iter = int(state.get("max_iter", self.max_iter))
        self.last_refit = dict(state.get("last_refit", {}))


def init_state(cfg: RunConfig, *, max_iter: int = 1, adaptation: bool = True) -> TrainState:
    """Build model, optimizers and (when enabled) discriminators and memory.

    The tracker is created first, right after seeding, so its initial weights do
    not depend on which adaptation modules are enabled.
    """
    torch.manual_seed(cfg.seed)
    device = torch.device(cfg.train.device)
    model = TrackerModel(cfg.tracker, in_channels=cfg.data.in_channels).to(device)
    if cfg.train.init_checkpoint:
        load_model_weights(model, cfg.train.init_checkpoint)
        logger.info("initialized tracker from %s", cfg.train.init_checkpoint)

    t = cfg.train
    state = TrainState(
        model=model,
        opt_G=torch.optim.Adam(model.parameters(), lr=t.lr_backbone),
        max_iter=max_iter,
    )
    if adaptation and cfg.agda.enabled:
        discs = build_discriminators(cfg.tracker.widths, cfg.agda).to(device)
        state.discriminators = discs
        state.opt_D = torch.optim.Adam(discs.parameters(), lr=t.lr_discriminator)
    if adaptation and cfg.csda.enabled:
        state.opt_sub = torch.optim.Adam(model.backbone.parameters(), lr=t.lr_backbone)
        state.memory = DescriptorMemory(cfg.csda)
    return state
