"""Progressive training loop.

Per iteration: refit clusters on schedule, step 1 (tracking + adversarial
global alignment, then a discriminator update), step 2 (subdomain alignment on
the backbone), then push the iteration's descriptors into the memory banks.

Step 1 generator objective is ``L_track - L_adv_G`` evaluated through the
gradient-reversal layer, so the backbone descends on ``L_adv_G`` while the
discriminators stay frozen. Step 2 has its own optimizer over backbone
parameters and is skipped when ``L_sub <= csda.skip_below`` or no class is
shared by the two domains.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from pdat_adapt.descriptors import pyramid_descriptors
from pdat_adapt.global_alignment import adv_loss_D, adv_loss_G, discriminate, grl_coefficient
from pdat_adapt.lmmd import KernelConfig, lmmd_loss
from pdat_common.errors import DataError, NumericalAbort
from pdat_common.telemetry import append_record, log_event
from pdat_config.run_config import RunConfig
from pdat_data.batches import Batch, MixedBatchStream, PairDataset
from pdat_data.pairs import pair_seed
from pdat_tracker.checkpoint import SNAPSHOT_FILE, load_checkpoint, save_checkpoint
from pdat_tracker.losses import LossBundle, tracking_loss
from pdat_train.schedules import poly_lr, set_lr
from pdat_train.state import TrainState, init_state

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_DIR = "checkpoints"
STAGES = (1, 2, 3, 4)
WARMUP_STREAM = 0x5EED


def configure_determinism(enabled: bool) -> None:
    if enabled:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _check_finite(name: str, value: torch.Tensor, state: TrainState, ids: list[str]) -> None:
    if torch.isfinite(value).all():
        return
    details = {"loss": name, "iteration": state.iteration, "batch_ids": list(ids)}
    log_event("train", "numerical_abort", details, ok=False)
    raise NumericalAbort(f"non-finite {name} at iteration {state.iteration}", details=details)


def _lrs(state: TrainState, cfg: RunConfig) -> tuple[float, float]:
    t = cfg.train
    lr_g = poly_lr(t.lr_backbone, state.iteration, state.max_iter, t.poly_power)
    lr_d = poly_lr(t.lr_discriminator, state.iteration, state.max_iter, t.poly_power) if state.opt_D else 0.0
    return lr_g, lr_d


def _tracking_forward(state: TrainState, cfg: RunConfig, batch_s: Batch):
    if batch_s.boxes is None:
        raise DataError("source batch carries no boxes")
    out, z_s, x_s = state.model(batch_s.template, batch_s.search)
    tr = cfg.tracker
    bundle = tracking_loss(
        out,
        batch_s.boxes,
        lambdas=(tr.lambda_cls, tr.lambda_reg, tr.lambda_cen),
        stride=state.model.stride,
        search_size=cfg.data.search_size,
    )
    return bundle, z_s, x_s


def _apply(optimizer: torch.optim.Optimizer, loss: torch.Tensor) -> None:
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()


def train_step1(batch_s: Batch, batch_t: Batch | None, state: TrainState, cfg: RunConfig) -> LossBundle:
    """Tracking loss on source, generator loss on target, then one discriminator update."""
    if batch_t is None or len(batch_t) == 0:
        raise DataError("step 1 needs a non-empty target batch")
    state.model.train()
    lr_g, lr_d = _lrs(state, cfg)
    set_lr(state.opt_G, lr_g)

    bundle, z_s, x_s = _tracking_forward(state, cfg, batch_s)
    objective = bundle.total
    discs = state.discriminators
    stages = sorted(cfg.agda.stages)
    z_t = x_t = None
    if discs is not None:
        coef = grl_coefficient(cfg.agda, state.iteration, state.max_iter)
        z_t, x_t = state.model.pyramids(batch_t.template, batch_t.search)
        discs.requires_grad_(False)
        per_stage = [
            adv_loss_G(
                discriminate(x_t.stage(m), discs[str(m)], coef),
                discriminate(z_t.stage(m), discs[str(m)], coef),
            )
            for m in stages
        ]
        discs.requires_grad_(True)
        adv_g = torch.stack(per_stage).mean()
        bundle.adv_G = adv_g.detach()
        bundle.flags["adv_G_stages"] = {str(m): float(v.detach()) for m, v in zip(stages, per_stage)}
        objective = objective - adv_g

    _check_finite("step1", objective, state, batch_s.ids + batch_t.ids)
    _apply(state.opt_G, objective)

    if discs is not None and state.opt_D is not None:
        set_lr(state.opt_D, lr_d)
        per_stage_d = []
        for m in stages:
            d = discs[str(m)]
            per_stage_d.append(
                adv_loss_D(
                    {
                        "source": (discriminate(x_s.stage(m).detach(), d), discriminate(z_s.stage(m).detach(), d)),
                        "target": (discriminate(x_t.stage(m).detach(), d), discriminate(z_t.stage(m).detach(), d)),
                    }
                )
            )
        adv_d = torch.stack(per_stage_d).mean()
        _check_finite("adv_D", adv_d, state, batch_s.ids + batch_t.ids)
        _apply(state.opt_D, adv_d)
        bundle.adv_D = adv_d.detach()
        bundle.flags["adv_D_stages"] = {str(m): float(v.detach()) for m, v in zip(stages, per_stage_d)}

    bundle.flags["lr_G"], bundle.flags["lr_D"] = lr_g, lr_d
    return bundle


@dataclass
class Step2Result:
    sub: float = 0.0
    skipped: bool = True
    present: int = 0
    reason: str | None = None
    descriptors: dict[str, dict[int, np.ndarray]] = field(default_factory=dict)


def _numpy_descriptors(desc: dict[int, torch.Tensor]) -> dict[int, np.ndarray]:
    return {m: v.detach().cpu().numpy().astype(np.float64) for m, v in desc.items()}


@torch.no_grad()
def batch_descriptors(state: TrainState, batch: Batch) -> dict[int, np.ndarray]:
    z, x = state.model.pyramids(batch.template, batch.search)
    return _numpy_descriptors(pyramid_descriptors(z, x, STAGES))


def train_step2(batch_s: Batch, batch_t: Batch, state: TrainState, cfg: RunConfig) -> Step2Result:
    """LMMD between voted pseudo-classes of both domains; updates backbone parameters only."""
    memory = state.memory
    if memory is None or state.opt_sub is None:
        return Step2Result(reason="disabled")
    if not memory.fitted:
        return Step2Result(
            reason="no_clusters",
            descriptors={"source": batch_descriptors(state, batch_s), "target": batch_descriptors(state, batch_t)},
        )

    state.model.train()
    z_s, x_s = state.model.pyramids(batch_s.template, batch_s.search)
    z_t, x_t = state.model.pyramids(batch_t.template, batch_t.search)
    desc_s = pyramid_descriptors(z_s, x_s, STAGES)
    desc_t = pyramid_descriptors(z_t, x_t, STAGES)
    np_s, np_t = _numpy_descriptors(desc_s), _numpy_descriptors(desc_t)
    labels_s, labels_t = memory.label(np_s), memory.label(np_t)

    kernel = KernelConfig(multipliers=cfg.csda.kernel_multipliers)
    results = [
        lmmd_loss(desc_s[m], desc_t[m], labels_s, labels_t, memory.num_clusters, kernel)
        for m in sorted(cfg.csda.align_stages)
    ]
    loss = torch.stack([r.loss for r in results]).mean()
    present = results[0].num_present
    _check_finite("sub", loss, state, batch_s.ids + batch_t.ids)

    res = Step2Result(sub=float(loss.detach()), present=present, descriptors={"source": np_s, "target": np_t})
    if present == 0 or res.sub <= cfg.csda.skip_below:
        res.reason = "no_shared_classes" if present == 0 else "below_tolerance"
        log_event(
            "train",
            "csda.step2_skip",
            {"iteration": state.iteration, "reason": res.reason, "sub": res.sub, "C_prime": present},
        )
        return res

    set_lr(state.opt_sub, _lrs(state, cfg)[0])
    _apply(state.opt_sub, loss)
    res.skipped = False
    return res


def _refit(state: TrainState, cfg: RunConfig) -> None:
    summary = state.memory.refit(pair_seed(cfg.seed, state.iteration))
    event = {"iteration": state.iteration, **summary.as_event()}
    state.last_refit = event
    log_event("train", "csda.refit", event)


def _warmup(state: TrainState, cfg: RunConfig, source: PairDataset, target: PairDataset) -> None:
    if state.memory is None or cfg.csda.warmup_batches <= 0:
        return
    stream = MixedBatchStream(
        source, target, cfg.train.batch_size,
        seed=pair_seed(cfg.seed, WARMUP_STREAM), in_channels=cfg.data.in_channels,
    )
    taken, epoch = 0, 0
    while taken < cfg.csda.warmup_batches:
        for batch_s, batch_t in stream.epoch(epoch):
            state.memory.push("source", batch_descriptors(state, batch_s))
            state.memory.push("target", batch_descriptors(state, batch_t))
            taken += 1
            if taken >= cfg.csda.warmup_batches:
                break
        epoch += 1
    logger.info("memory warm-up: %d batches, %d rows per domain", taken, len(state.memory))


def _record(state: TrainState, epoch: int, bundle: LossBundle, step2: Step2Result) -> dict[str, Any]:
    m = bundle.as_metrics()
    m["sub"] = step2.sub
    rec: dict[str, Any] = {
        "iter": state.iteration,
        "epoch": epoch,
        "lr_G": bundle.flags.get("lr_G", 0.0),
        "lr_D": bundle.flags.get("lr_D", 0.0),
        **m,
        "C_selected": state.memory.num_clusters if state.memory is not None else 0,
        "skipped_step2": step2.skipped,
    }
    if "adv_G_stages" in bundle.flags:
        rec["adv_stages"] = {
            s: {"G": bundle.flags["adv_G_stages"][s], "D": bundle.flags.get("adv_D_stages", {}).get(s, 0.0)}
            for s in bundle.flags["adv_G_stages"]
        }
    return rec


def _baseline_step(batch_s: Batch, state: TrainState, cfg: RunConfig) -> LossBundle:
    state.model.train()
    lr_g, _ = _lrs(state, cfg)
    set_lr(state.opt_G, lr_g)
    bundle, _, _ = _tracking_forward(state, cfg, batch_s)
    objective = bundle.total
    _check_finite("step1", objective, state, batch_s.ids)
    _apply(state.opt_G, objective)
    bundle.flags["lr_G"], bundle.flags["lr_D"] = lr_g, 0.0
    return bundle


@dataclass
class TrainResult:
    state: TrainState
    run_dir: Path
    metrics_path: Path
    checkpoints: list[Path]


def _run(
    cfg: RunConfig,
    source: PairDataset,
    target: PairDataset | None,
    run_dir: Path,
    *,
    progressive: bool,
) -> TrainResult:
    configure_determinism(cfg.train.deterministic)
    stream = MixedBatchStream(
        source, target, cfg.train.batch_size, seed=cfg.seed,
        in_channels=cfg.data.in_channels, workers=cfg.data.workers,
    )
    max_iter = cfg.train.max_iter or cfg.train.epochs * stream.steps_per_epoch
    state = init_state(cfg, max_iter=max_iter, adaptation=progressive)
    device = torch.device(cfg.train.device)

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / SNAPSHOT_FILE).write_text(cfg.to_text(), encoding="utf-8")
    metrics_path = run_dir / METRICS_FILE

    if cfg.train.resume:
        ck = load_checkpoint(cfg.train.resume, map_location=device)
        state.load_state_dict(ck["payload"])
        if ck["manifest"].get("config_hash") != cfg.config_hash():
            logger.warning("resuming %s under a different config", cfg.train.resume)
        logger.info("resumed from %s at iteration %d (epoch %d)", cfg.train.resume, state.iteration, state.epoch)
    else:
        metrics_path.unlink(missing_ok=True)
        if progressive and target is not None:
            _warmup(state, cfg, source, target)

    checkpoints: list[Path] = []
    for epoch in range(state.epoch, cfg.train.epochs):
        if state.iteration >= state.max_iter:
            break
        sums: dict[str, float] = {}
        steps = 0
        for batch_s, batch_t in stream.epoch(epoch):
            if state.iteration >= state.max_iter:
                break
            batch_s = batch_s.to(device)
            batch_t = batch_t.to(device) if batch_t is not None else None

            if progressive:
                mem = state.memory
                if mem is not None and len(mem) > 0 and state.iteration % cfg.csda.refit_interval == 0:
                    _refit(state, cfg)
                bundle = train_step1(batch_s, batch_t, state, cfg)
                step2 = train_step2(batch_s, batch_t, state, cfg)
                if mem is not None:
                    mem.push("source", step2.descriptors["source"])
                    mem.push("target", step2.descriptors["target"])
            else:
                bundle = _baseline_step(batch_s, state, cfg)
                step2 = Step2Result(reason="disabled")

            rec = _record(state, epoch, bundle, step2)
            append_record(metrics_path, rec)
            for k in ("cls", "reg", "cen", "adv_G", "adv_D", "sub"):
                sums[k] = sums.get(k, 0.0) + float(rec[k])
            steps += 1
            state.iteration += 1

        state.epoch = epoch + 1
        summary = {k: v / max(steps, 1) for k, v in sums.items()}
        ckpt = run_dir / CHECKPOINT_DIR / f"epoch-{state.epoch:03d}"
        try:
            save_checkpoint(
                ckpt, state.state_dict(), config_text=cfg.to_text(),
                step=state.iteration, epoch=state.epoch, metric_summary=summary,
            )
        except OSError as e:
            log_event("train", "checkpoint_failed", {"path": str(ckpt), "error": str(e)}, ok=False)
            raise DataError(f"checkpoint write failed: {e}", details={"path": str(ckpt)}) from e
        log_event("train", "checkpoint", {"path": str(ckpt), "epoch": state.epoch, "iteration": state.iteration})
        checkpoints.append(ckpt)
        logger.info("epoch %d done: %s", state.epoch, {k: round(v, 5) for k, v in summary.items()})

    return TrainResult(state=state, run_dir=run_dir, metrics_path=metrics_path, checkpoints=checkpoints)


def train(cfg: RunConfig, source: PairDataset, target: PairDataset, *, run_dir: Path | str) -> TrainResult:
    """Progressive training; with both adaptation modules disabled it reduces to the baseline."""
    if target is None or len(target) == 0:
        raise DataError("progressive training needs target pairs")
    return _run(cfg, source, target, Path(run_dir), progressive=True)


def train_source_only(
    cfg: RunConfig,
    source: PairDataset,
    target: PairDataset | None = None,
    *,
    run_dir: Path | str,
) -> TrainResult:
    """Tracking-loss-only baseline.

    When ``target`` is given only its size is used, to schedule the same number
    of steps per epoch as a progressive run on the same data.
    """
    return _run(cfg, source, target, Path(run_dir), progressive=False)
