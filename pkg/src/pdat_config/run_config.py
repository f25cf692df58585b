"""Run configuration: nested frozen dataclasses addressed by dotted keys.

Text format (``config.snapshot`` and the ``*.conf`` files under ``config/``)::

    # comment
    train.epochs=5
    csda.vote_weights=1,2,3,4

Resolution order: preset -> config file -> ``--set`` overrides -> ``--disable``.
Unknown keys are rejected with :class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from dotenv import dotenv_values

from pdat_common.errors import ConfigError
from pdat_common.validation import coerce_bool, coerce_float, coerce_int, coerce_list, coerce_str

PRESETS = ("desk", "paper")
NUM_STAGES = 4


@dataclass(frozen=True)
class AugmentConfig:
    # max translation of the search crop, in search-patch pixels
    shift: float = 8.0
    # scale jitter s: factor drawn from [1/(1+s), 1+s]
    scale: float = 0.05


@dataclass(frozen=True)
class DataConfig:
    source_root: str = ""
    target_root: str = ""
    target_pairs: str = ""
    eval_root: str = ""
    template_size: int = 96
    search_size: int = 192
    context: float = 2.0
    in_channels: int = 3
    keyframe_stride: int = 10
    conf_threshold: float = 0.5
    min_area: float = 16.0
    max_area_ratio: float = 0.5
    segmenter: str = "threshold"
    segment_polarity: str = "auto"
    segment_contrast: float = 40.0
    source_stride: int = 1
    source_frame_gap: int = 10
    max_target_pairs: int = 0
    workers: int = 1
    aug: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass(frozen=True)
class TrackerConfig:
    widths: tuple[int, ...] = (16, 32, 64, 128)
    head_width: int = 64
    head_stage: int = 4
    lambda_cls: float = 1.0
    lambda_reg: float = 3.0
    lambda_cen: float = 1.0
    window_influence: float = 0.3


@dataclass(frozen=True)
class AgdaConfig:
    enabled: bool = True
    stages: tuple[int, ...] = (1, 2, 3, 4)
    d_model: int = 64
    n_heads: int = 4
    ff_width: int = 128
    layers: int = 2
    token_grid: int = 8
    dropout: float = 0.0
    grl_coefficient: float = 1.0
    grl_warmup: float = 0.0


@dataclass(frozen=True)
class CsdaConfig:
    enabled: bool = True
    memory_size: int = 1024
    refit_interval: int = 50
    warmup_batches: int = 4
    cluster_min: int = 2
    cluster_max: int = 10
    kmeans_iter: int = 50
    kmeans_restarts: int = 3
    vote_weights: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    label_mode: str = "weighted"
    align_stages: tuple[int, ...] = (4,)
    kernel_multipliers: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    skip_below: float = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 24
    max_iter: int = 0
    lr_backbone: float = 0.001
    lr_discriminator: float = 0.005
    poly_power: float = 0.8
    optimizer: str = "adam"
    device: str = "cpu"
    deterministic: bool = False
    init_checkpoint: str = ""
    resume: str = ""


@dataclass(frozen=True)
class EvalConfig:
    workers: int = 1
    precision_threshold: float = 20.0
    probe_samples: int = 64
    probe_min: int = 32
    probe_holdout: float = 0.2
    max_sequences: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    preset: str = "desk"
    data: DataConfig = field(default_factory=DataConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    agda: AgdaConfig = field(default_factory=AgdaConfig)
    csda: CsdaConfig = field(default_factory=CsdaConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def flatten(self) -> dict[str, Any]:
        return _flatten(self)

    def to_text(self) -> str:
        lines = [f"{k}={_render(v)}" for k, v in self.flatten().items()]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        return apply_overrides(self, overrides)


# Values the paper preset pins down; the dataclass defaults already match them.
_PAPER_PRESET: dict[str, Any] = {
    "train.epochs": 20,
    "train.batch_size": 24,
    "train.lr_discriminator": 0.005,
    "train.poly_power": 0.8,
    "csda.cluster_min": 2,
    "csda.cluster_max": 10,
    "csda.vote_weights": (1.0, 2.0, 3.0, 4.0),
    "agda.stages": (1, 2, 3, 4),
    "csda.align_stages": (4,),
}

_DESK_PRESET: dict[str, Any] = {
    **_PAPER_PRESET,
    "train.epochs": 5,
    "train.batch_size": 8,
}


def _render(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _flatten(obj: Any, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(v):
            out.update(_flatten(v, prefix=key + "."))
        else:
            out[key] = v
    return out


def _coerce(hint: Any, value: Any, key: str) -> Any:
    origin = typing.get_origin(hint)
    if origin is tuple:
        item_t = typing.get_args(hint)[0]
        item = coerce_int if item_t is int else coerce_float
        return coerce_list(value, item, name=key)
    if hint is bool:
        return coerce_bool(value, name=key)
    if hint is int:
        return coerce_int(value, name=key)
    if hint is float:
        return coerce_float(value, name=key)
    return coerce_str(value, name=key)


def _set_path(obj: Any, parts: list[str], value: Any, full_key: str) -> Any:
    hints = typing.get_type_hints(type(obj))
    head, rest = parts[0], parts[1:]
    if head not in hints:
        raise ConfigError(f"unknown config key: {full_key}", details={"key": full_key})
    current = getattr(obj, head)
    if rest:
        if not dataclasses.is_dataclass(current):
            raise ConfigError(f"unknown config key: {full_key}", details={"key": full_key})
        return dataclasses.replace(obj, **{head: _set_path(current, rest, value, full_key)})
    if dataclasses.is_dataclass(current):
        raise ConfigError(f"config key names a section, not a value: {full_key}", details={"key": full_key})
    return dataclasses.replace(obj, **{head: _coerce(hints[head], value, full_key)})


def apply_overrides(cfg: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    for key, value in overrides.items():
        k = str(key).strip()
        if not k:
            continue
        cfg = _set_path(cfg, k.split("."), value, k)
    return cfg


def parse_config_file(path: Path) -> dict[str, str]:
    """Read a dotted key/value file (dotenv syntax, no interpolation)."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}", details={"path": str(p)})
    values = dotenv_values(dotenv_path=str(p), interpolate=False)
    out: dict[str, str] = {}
    for k, v in values.items():
        if v is None:
            raise ConfigError(f"config key without value: {k}", details={"key": k})
        out[k] = v
    return out


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}", details={"override": item})
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def validate_config(cfg: RunConfig) -> RunConfig:
    t, d, c, a = cfg.train, cfg.data, cfg.csda, cfg.agda

    def bad(key: str, msg: str) -> ConfigError:
        return ConfigError(f"{key}: {msg}", details={"key": key})

    if cfg.preset not in PRESETS:
        raise bad("preset", f"must be one of {', '.join(PRESETS)}")
    if t.epochs < 1:
        raise bad("train.epochs", "must be >= 1")
    if t.batch_size < 2 or t.batch_size % 2:
        raise bad("train.batch_size", "must be even and >= 2")
    for key, v in (("train.lr_backbone", t.lr_backbone), ("train.lr_discriminator", t.lr_discriminator)):
        if not v > 0:
            raise bad(key, "learning rates must be positive")
    if not t.poly_power > 0:
        raise bad("train.poly_power", "must be positive")
    if t.optimizer != "adam":
        raise bad("train.optimizer", "only 'adam' is supported")
    if d.search_size != 2 * d.template_size:
        raise bad("data.search_size", "must equal 2 * data.template_size")
    if d.template_size % 16 or d.search_size % 16:
        raise bad("data.template_size", "patch sides must be divisible by 16")
    if not 0.0 <= d.conf_threshold <= 1.0:
        raise bad("data.conf_threshold", "must lie in [0, 1]")
    if d.keyframe_stride < 1 or d.source_stride < 1:
        raise bad("data.keyframe_stride", "strides must be >= 1")
    if d.segmenter not in ("threshold", "offline"):
        raise bad("data.segmenter", "must be 'threshold' or 'offline'")
    if d.segment_polarity not in ("auto", "bright", "dark"):
        raise bad("data.segment_polarity", "must be auto, bright or dark")
    if d.in_channels not in (1, 3):
        raise bad("data.in_channels", "must be 1 or 3")
    if len(cfg.tracker.widths) != NUM_STAGES:
        raise bad("tracker.widths", f"needs exactly {NUM_STAGES} stage widths")
    if not 1 <= cfg.tracker.head_stage <= NUM_STAGES:
        raise bad("tracker.head_stage", "must be a stage index in 1..4")
    if not 0.0 <= cfg.tracker.window_influence <= 1.0:
        raise bad("tracker.window_influence", "must lie in [0, 1]")
    for key, stages in (("agda.stages", a.stages), ("csda.align_stages", c.align_stages)):
        if any(not 1 <= s <= NUM_STAGES for s in stages) or len(set(stages)) != len(stages):
            raise bad(key, "stage indices must be distinct values in 1..4")
    if a.d_model % a.n_heads:
        raise bad("agda.d_model", "must be divisible by agda.n_heads")
    if a.grl_coefficient < 0 or not 0.0 <= a.grl_warmup <= 1.0:
        raise bad("agda.grl_coefficient", "coefficient must be >= 0 and warm-up fraction in [0, 1]")
    if not 2 <= c.cluster_min <= c.cluster_max <= 10:
        raise bad("csda.cluster_min", "cluster range must satisfy 2 <= min <= max <= 10")
    if len(c.vote_weights) != NUM_STAGES or any(w <= 0 for w in c.vote_weights):
        raise bad("csda.vote_weights", "needs one positive weight per stage")
    if c.label_mode not in ("weighted", "stage4"):
        raise bad("csda.label_mode", "must be 'weighted' or 'stage4'")
    if any(m <= 0 for m in c.kernel_multipliers):
        raise bad("csda.kernel_multipliers", "multipliers must be positive")
    if c.refit_interval < 1 or c.memory_size < 2 * c.cluster_max:
        raise bad("csda.memory_size", "memory must hold at least 2 * cluster_max descriptors")
    return cfg


def resolve_config(
    *,
    preset: str | None = None,
    config_file: Path | str | None = None,
    overrides: Mapping[str, Any] | None = None,
    disable: Iterable[str] = (),
) -> RunConfig:
    """Build a validated RunConfig from preset, file, overrides and module switches."""
    file_values = parse_config_file(Path(config_file)) if config_file else {}
    chosen = preset or file_values.get("preset") or "desk"
    if chosen not in PRESETS:
        raise ConfigError(f"preset: must be one of {', '.join(PRESETS)}", details={"key": "preset"})

    cfg = apply_overrides(RunConfig(preset=chosen), _DESK_PRESET if chosen == "desk" else _PAPER_PRESET)
    cfg = apply_overrides(cfg, {k: v for k, v in file_values.items() if k != "preset"})
    cfg = apply_overrides(cfg, dict(overrides or {}))

    for module in disable:
        m = module.strip().lower()
        if not m:
            continue
        if m not in ("agda", "csda"):
            raise ConfigError(f"--disable accepts agda and csda, got {m!r}", details={"key": m})
        cfg = apply_overrides(cfg, {f"{m}.enabled": False})

    return validate_config(cfg)


def load_snapshot(path: Path | str) -> RunConfig:
    """Rebuild the exact RunConfig written as ``config.snapshot``."""
    values = parse_config_file(Path(path))
    cfg = RunConfig(preset=values.get("preset", "desk"))
    return validate_config(apply_overrides(cfg, {k: v for k, v in values.items() if k != "preset"}))
