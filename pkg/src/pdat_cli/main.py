"""``pdat`` command line: preprocess, train, eval, export-embeddings, report.

Every command prints a JSON payload and exits with its ``exit_code``
(0 ok, 2 config error, 3 data error, 4 numerical abort).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence as Seq

from pdat_adapt.lmmd import KernelConfig
from pdat_adapt.memory import REFERENCE_STAGE, DescriptorMemory
from pdat_common.errors import DataError
from pdat_common.tooling import InstrumentConfig, instrument_command
from pdat_config.run_config import PRESETS, RunConfig, load_snapshot, parse_overrides, resolve_config
from pdat_config.settings import artifacts_dir, config_dir, init_runtime
from pdat_data.batches import PairDataset
from pdat_data.pairs import DomainSample, generate_source_pairs, generate_target_pairs, load_pairs, save_pairs
from pdat_data.segmenters import build_segmenter
from pdat_data.sequences import load_dataset
from pdat_eval.embeddings import cache_key, cached_descriptors, export_embeddings, select_samples
from pdat_eval.harness import evaluate, merge_reports, write_report, format_table
from pdat_eval.probe import domain_gap_probe
from pdat_tracker.checkpoint import SNAPSHOT_FILE, load_checkpoint
from pdat_tracker.tracker import TrackerModel
from pdat_train.trainer import train, train_source_only

logger = logging.getLogger(__name__)


def _pretty(x) -> str:
    return json.dumps(x, indent=2, ensure_ascii=False, sort_keys=True, default=str)


def _write_snapshot(run_dir: Path, cfg: RunConfig) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    p = run_dir / SNAPSHOT_FILE
    p.write_text(cfg.to_text(), encoding="utf-8")
    return p


def _default_run_dir(cfg: RunConfig, command: str) -> Path:
    return artifacts_dir() / "runs" / f"{command}-{cfg.preset}-{cfg.config_hash()}"


def _require(value: str, key: str) -> Path:
    if not value:
        raise DataError(f"{key} is not set", details={"key": key})
    return Path(value)


def _target_sequences(cfg: RunConfig, root: Path):
    seqs = load_dataset(root, "target")
    if not seqs:
        raise DataError(f"no target sequences under {root}", details={"path": str(root)})
    return seqs


def _make_target_pairs(cfg: RunConfig, root: Path) -> tuple[list[DomainSample], dict]:
    seqs = _target_sequences(cfg, root)
    seg = build_segmenter(
        cfg.data.segmenter, root=root, contrast=cfg.data.segment_contrast, polarity=cfg.data.segment_polarity
    )
    return generate_target_pairs(seqs, seg, cfg)


def _source_pairs(cfg: RunConfig) -> list[DomainSample]:
    seqs = load_dataset(_require(cfg.data.source_root, "data.source_root"), "source")
    if not seqs:
        raise DataError("no source sequences", details={"path": cfg.data.source_root})
    return generate_source_pairs(seqs, cfg)


def _target_pairs(cfg: RunConfig) -> list[DomainSample]:
    if cfg.data.target_pairs and Path(cfg.data.target_pairs).exists():
        samples = load_pairs(cfg.data.target_pairs)
    else:
        samples, _ = _make_target_pairs(cfg, _require(cfg.data.target_root, "data.target_root"))
    if not samples:
        raise DataError("no target pairs available for training")
    return samples


def _load_for_inference(checkpoint: Path, cfg: RunConfig):
    """Model (and memory, when saved) built from the checkpoint's own config snapshot."""
    ck = load_checkpoint(checkpoint, map_location=cfg.train.device)
    snap_path = Path(checkpoint) / SNAPSHOT_FILE
    snap = load_snapshot(snap_path) if snap_path.exists() else cfg
    if ck["manifest"].get("config_hash") and ck["manifest"]["config_hash"] != cfg.config_hash():
        logger.warning("checkpoint %s was trained under a different config; using its tracker settings", checkpoint)
    model = TrackerModel(snap.tracker, in_channels=snap.data.in_channels).to(cfg.train.device)
    model.load_state_dict(ck["payload"]["model"])
    model.eval()
    memory = None
    if ck["payload"].get("memory"):
        memory = DescriptorMemory(snap.csda)
        memory.load_state_dict(ck["payload"]["memory"])
    return model, memory, snap


@instrument_command(InstrumentConfig(kind="cli", name="pdat.preprocess"))
def cmd_preprocess(cfg: RunConfig, in_dir: Path, out_dir: Path) -> dict:
    _write_snapshot(out_dir, cfg)
    samples, manifest = _make_target_pairs(cfg, in_dir)
    if not samples:
        raise DataError(
            f"no candidates at confidence threshold {cfg.data.conf_threshold}",
            details={"manifest": manifest},
        )
    save_pairs(out_dir, samples, manifest)
    return {"out_dir": str(out_dir), "manifest": manifest, "pairs": manifest["pairs"]}


@instrument_command(InstrumentConfig(kind="cli", name="pdat.train"))
def cmd_train(cfg: RunConfig, run_dir: Path, *, baseline: bool = False) -> dict:
    _write_snapshot(run_dir, cfg)
    source = PairDataset(_source_pairs(cfg), "source")
    if baseline:
        target = PairDataset(_target_pairs(cfg), "target") if (cfg.data.target_pairs or cfg.data.target_root) else None
        result = train_source_only(cfg, source, target, run_dir=run_dir)
    else:
        result = train(cfg, source, PairDataset(_target_pairs(cfg), "target"), run_dir=run_dir)
    return {
        "run_dir": str(result.run_dir),
        "metrics": str(result.metrics_path),
        "checkpoints": [str(p) for p in result.checkpoints],
        "iterations": result.state.iteration,
        "config_hash": cfg.config_hash(),
    }


def _domain_gap(model: TrackerModel, cfg: RunConfig, checkpoint: Path) -> dict:
    try:
        src = select_samples(_source_pairs(cfg), cfg.eval.probe_samples, cfg.seed)
        tgt = select_samples(_target_pairs(cfg), cfg.eval.probe_samples, cfg.seed)
    except DataError as e:
        return {"skipped": e.message}
    descs = {}
    for domain, samples in (("source", src), ("target", tgt)):
        key = cache_key(checkpoint.resolve(), domain, cfg.config_hash(), len(samples))
        descs[domain] = cached_descriptors(
            model, samples, key=key, batch_size=cfg.train.batch_size, in_channels=cfg.data.in_channels
        )[REFERENCE_STAGE]
    try:
        probe = domain_gap_probe(
            descs["source"], descs["target"],
            kernel=KernelConfig(multipliers=cfg.csda.kernel_multipliers),
            min_samples=cfg.eval.probe_min, holdout=cfg.eval.probe_holdout, seed=cfg.seed,
        )
    except DataError as e:
        return {"skipped": e.message}
    return probe.as_dict()


@instrument_command(InstrumentConfig(kind="cli", name="pdat.eval"))
def cmd_eval(cfg: RunConfig, checkpoint: Path, dataset: Path, out_dir: Path, *, probe: bool = True) -> dict:
    _write_snapshot(out_dir, cfg)
    model, _, snap = _load_for_inference(checkpoint, cfg)
    seqs = load_dataset(dataset, "target")
    if not seqs:
        raise DataError(f"evaluation dataset {dataset} is empty", details={"path": str(dataset)})
    geometry = ("in_channels", "template_size", "search_size", "context")
    run_cfg = replace(cfg, tracker=snap.tracker, data=replace(cfg.data, **{k: getattr(snap.data, k) for k in geometry}))
    report = evaluate(model, seqs, run_cfg)
    if probe:
        report.domain_gap = _domain_gap(model, run_cfg, checkpoint)
    report_path, curves_path = write_report(report, out_dir)
    return {"report": str(report_path), "curves": str(curves_path), "aggregate": report.aggregate,
            "domain_gap": report.domain_gap, "sequences": len(report.per_sequence)}


@instrument_command(InstrumentConfig(kind="cli", name="pdat.export_embeddings"))
def cmd_export_embeddings(cfg: RunConfig, checkpoint: Path, out_file: Path, *, samples: int = 0) -> dict:
    _write_snapshot(out_file.parent, cfg)
    model, memory, _ = _load_for_inference(checkpoint, cfg)
    n_s = (samples + 1) // 2 if samples > 0 else 0
    n_t = samples // 2 if samples > 0 else 0
    chosen = {
        "source": select_samples(_source_pairs(cfg), n_s, cfg.seed),
        "target": select_samples(_target_pairs(cfg), n_t, cfg.seed),
    }
    descs = {
        domain: cached_descriptors(
            model, s,
            key=cache_key(checkpoint.resolve(), domain, cfg.config_hash(), len(s), cfg.seed),
            batch_size=cfg.train.batch_size, in_channels=cfg.data.in_channels,
        )
        for domain, s in chosen.items()
    }
    rows = export_embeddings(out_file, descs, memory)
    return {"out": str(out_file), "rows": rows}


@instrument_command(InstrumentConfig(kind="cli", name="pdat.report"))
def cmd_report(reports: list[Path], out_dir: Path) -> dict:
    rows = merge_reports(reports, out_dir)
    return {"out_dir": str(out_dir), "rows": len(rows), "table": format_table(rows)}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="Run config file (dotted key=value lines), or a file name under PDAT_CONFIG_DIR")
    p.add_argument("--preset", choices=PRESETS, default=None, help="Base preset (default: desk)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="Override one config key; repeatable")
    p.add_argument("--disable", default="", help="Comma-separated modules to switch off: agda,csda")
    p.add_argument("--deterministic", action="store_true", help="Single-threaded, deterministic kernels")
    p.add_argument("--run-dir", type=Path, default=None, help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdat", description="Progressive domain adaptation for TIR tracking")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="Generate pseudo-labeled target pairs")
    _add_common(p)
    p.add_argument("--in-dir", type=Path, default=None, help="Target dataset root (default: data.target_root)")
    p.add_argument("--out-dir", type=Path, default=None, help="Pair directory (default: data.target_pairs)")

    p = sub.add_parser("train", help="Progressive training (or the source-only baseline)")
    _add_common(p)
    p.add_argument("--baseline", action="store_true", help="Train with the tracking loss only")

    p = sub.add_parser("eval", help="One-pass evaluation and domain-gap probe")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, default=None, help="Evaluation root (default: data.eval_root)")
    p.add_argument("--no-probe", action="store_true", help="Skip the domain-gap probe")

    p = sub.add_parser("export-embeddings", help="Stage-4 descriptors with domain and voted label as CSV")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--samples", type=int, default=0, help="Rows to export (0: all pairs)")
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("report", help="Merge report files into one comparison table")
    p.add_argument("reports", type=Path, nargs="+")
    p.add_argument("--out-dir", type=Path, default=Path("."))
    return ap


def _config_file(path: Path | None) -> Path | None:
    """Bare names such as ``desk.conf`` fall back to the shipped config folder."""
    if path is None or path.exists() or path.parent != Path("."):
        return path
    shipped = config_dir() / path
    return shipped if shipped.exists() else path


def _resolve(args: argparse.Namespace) -> RunConfig:
    cfg = resolve_config(
        preset=args.preset,
        config_file=_config_file(args.config),
        overrides=parse_overrides(args.overrides),
        disable=[m for m in args.disable.split(",") if m.strip()],
    )
    if args.deterministic:
        cfg = cfg.with_overrides({"train.deterministic": True, "data.workers": 1, "eval.workers": 1})
    return cfg


@instrument_command(InstrumentConfig(kind="cli", name="pdat.resolve_config", new_run_id_per_call=False))
def _resolve_cmd(args: argparse.Namespace) -> dict:
    return {"config": _resolve(args)}


def run(argv: Seq[str] | None = None) -> dict:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return cmd_report(list(args.reports), args.out_dir)

    resolved = _resolve_cmd(args)
    if "error" in resolved:
        return resolved
    cfg: RunConfig = resolved["config"]

    if args.command == "preprocess":
        in_dir = args.in_dir or _path_or_none(cfg.data.target_root)
        out_dir = args.out_dir or args.run_dir or _path_or_none(cfg.data.target_pairs) or _default_run_dir(cfg, "pairs")
        if in_dir is None:
            return _missing("data.target_root")
        return cmd_preprocess(cfg, in_dir, out_dir)
    if args.command == "train":
        return cmd_train(cfg, args.run_dir or _default_run_dir(cfg, "train"), baseline=args.baseline)
    if args.command == "eval":
        dataset = args.dataset or _path_or_none(cfg.data.eval_root)
        if dataset is None:
            return _missing("data.eval_root")
        out_dir = args.run_dir or Path(args.checkpoint) / "eval"
        return cmd_eval(cfg, args.checkpoint, dataset, out_dir, probe=not args.no_probe)
    if args.command == "export-embeddings":
        out = args.out or (args.run_dir or Path(args.checkpoint)) / "embeddings.csv"
        return cmd_export_embeddings(cfg, args.checkpoint, out, samples=args.samples)
    raise AssertionError(f"unhandled command {args.command}")


def _path_or_none(value: str) -> Path | None:
    return Path(value) if value else None


def _missing(key: str) -> dict:
    return DataError(f"{key} is not set", details={"key": key}).to_envelope(exit_code=DataError.exit_code)


def main(argv: Seq[str] | None = None) -> int:
    init_runtime()
    payload = run(argv)
    payload.pop("config", None)
    print(_pretty(payload))
    return int(payload.get("exit_code", 0))


if __name__ == "__main__":
    sys.exit(main())
