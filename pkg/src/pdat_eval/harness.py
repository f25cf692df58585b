"""Sequence evaluation, report files and report merging.

Sequences are tracked independently in a thread pool over a read-only model;
report assembly happens on the calling thread in sequence order.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from pdat_common.errors import DataError
from pdat_config.run_config import RunConfig
from pdat_data.sequences import Sequence
from pdat_eval.metrics import Curve, centers, normalized_precision_curve, precision_curve, success_auc
from pdat_tracker.tracker import TrackerModel, track_sequence

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
CURVES_FILE = "curves.csv"
COMPARISON_CSV = "comparison.csv"
COMPARISON_TXT = "comparison.txt"
METRICS = ("success", "precision", "norm_precision")


@dataclass
class SequenceReport:
    id: str
    frames: int
    excluded: int
    precision: float
    norm_precision: float
    success: float
    curves: dict[str, Curve] = field(default_factory=dict)
    degenerate_frames: int = 0

    @property
    def valid(self) -> bool:
        return all(c.valid for c in self.curves.values())

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "valid": self.valid,
            "frames": self.frames,
            "excluded": self.excluded,
            "success": self.success,
            "precision": self.precision,
            "norm_precision": self.norm_precision,
            "degenerate_frames": self.degenerate_frames,
        }


@dataclass
class MetricReport:
    per_sequence: list[SequenceReport]
    aggregate: dict
    domain_gap: dict = field(default_factory=dict)
    config_hash: str = ""
    name: str = ""

    def aggregate_curves(self) -> dict[str, Curve]:
        valid = [s for s in self.per_sequence if s.valid]
        out: dict[str, Curve] = {}
        if not valid:
            return out
        for key in METRICS:
            first = valid[0].curves[key]
            values = np.mean([s.curves[key].values for s in valid], axis=0)
            out[key] = Curve(
                thresholds=first.thresholds,
                values=values,
                auc=float(values.mean()),
                frames=sum(s.curves[key].frames for s in valid),
            )
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "per_sequence": [s.as_dict() for s in self.per_sequence],
            "aggregate": dict(self.aggregate),
            "domain_gap": dict(self.domain_gap),
            "config_hash": self.config_hash,
        }


def score_sequence(seq_id: str, pred_boxes, gt_boxes, *, precision_threshold: float = 20.0) -> SequenceReport:
    pred = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if len(pred) != len(gt):
        raise DataError(f"{seq_id}: {len(pred)} predictions for {len(gt)} frames", details={"sequence": seq_id})
    pc = centers(pred)
    prec = precision_curve(pc, centers(gt), at=precision_threshold)
    norm = normalized_precision_curve(pc, gt)
    succ = success_auc(pred, gt)
    rep = SequenceReport(
        id=seq_id,
        frames=len(gt),
        excluded=norm.excluded,
        precision=float(prec.at or 0.0),
        norm_precision=norm.auc,
        success=succ.auc,
        curves={"success": succ, "precision": prec, "norm_precision": norm},
    )
    if not rep.valid:
        logger.warning("sequence %s has no scorable frames; marked invalid", seq_id)
    return rep


def aggregate(per_sequence: list[SequenceReport]) -> dict:
    """Unweighted mean over valid sequences."""
    valid = [s for s in per_sequence if s.valid]
    agg: dict = {"sequences": len(valid), "invalid": len(per_sequence) - len(valid)}
    for key in METRICS:
        agg[key] = float(np.mean([getattr(s, key) for s in valid])) if valid else 0.0
    return agg


def score_sequences(
    predictions: Mapping[str, object],
    sequences: Iterable[Sequence],
    *,
    precision_threshold: float = 20.0,
    config_hash: str = "",
) -> MetricReport:
    """Score precomputed predictions (``{sequence id: boxes}``) against sequence ground truth."""
    per_seq = []
    for seq in sequences:
        if not seq.has_boxes:
            raise DataError(f"sequence {seq.id} has no ground truth", details={"sequence": seq.id})
        if seq.id not in predictions:
            raise DataError(f"no predictions for sequence {seq.id}", details={"sequence": seq.id})
        per_seq.append(score_sequence(seq.id, predictions[seq.id], seq.boxes, precision_threshold=precision_threshold))
    return MetricReport(per_sequence=per_seq, aggregate=aggregate(per_seq), config_hash=config_hash)


def evaluate(
    model: TrackerModel,
    sequences: list[Sequence],
    cfg: RunConfig,
    *,
    workers: int | None = None,
) -> MetricReport:
    """Track every sequence from its first ground-truth box and score it."""
    if not sequences:
        raise DataError("evaluation dataset is empty")
    missing = [s.id for s in sequences if not s.has_boxes]
    if missing:
        raise DataError("evaluation sequences need ground truth", details={"sequences": missing})
    if cfg.eval.max_sequences > 0:
        sequences = sequences[: cfg.eval.max_sequences]

    model.eval()

    def run(seq: Sequence):
        return track_sequence(seq, tuple(seq.boxes[0]), model, data=cfg.data, tracker=cfg.tracker)

    n = max(1, int(workers if workers is not None else cfg.eval.workers))
    if n == 1:
        tracks = [run(s) for s in sequences]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            tracks = list(pool.map(run, sequences))

    per_seq = []
    for seq, track in zip(sequences, tracks):
        rep = score_sequence(seq.id, [r.box for r in track], seq.boxes, precision_threshold=cfg.eval.precision_threshold)
        rep.degenerate_frames = sum(1 for r in track if r.flags.get("degenerate_box"))
        per_seq.append(rep)
        logger.info("%s: success %.4f precision %.4f", seq.id, rep.success, rep.precision)
    return MetricReport(per_sequence=per_seq, aggregate=aggregate(per_seq), config_hash=cfg.config_hash())


def write_report(report: MetricReport, out_dir: Path | str, *, name: str | None = None) -> tuple[Path, Path]:
    """Write ``report.json`` and ``curves.csv`` (rows: sequence, metric, threshold, value)."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    report.name = name or report.name or d.name
    report_path = d / REPORT_FILE
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    curves_path = d / CURVES_FILE
    with curves_path.open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sequence", "metric", "threshold", "value"])
        rows = [(s.id, s.curves) for s in report.per_sequence if s.valid]
        rows.append(("aggregate", report.aggregate_curves()))
        for seq_id, curves in rows:
            for key in METRICS:
                c = curves.get(key)
                if c is None:
                    continue
                for t, v in zip(c.thresholds, c.values):
                    w.writerow([seq_id, key, f"{float(t):.4f}", f"{float(v):.6f}"])
    logger.info("report written: %s", report_path)
    return report_path, curves_path


def load_report(path: Path | str) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / REPORT_FILE
    if not p.exists():
        raise DataError(f"report not found: {p}", details={"path": str(p)})
    return json.loads(p.read_text(encoding="utf-8"))


def merge_reports(paths: Iterable[Path | str], out_dir: Path | str | None = None) -> list[dict]:
    """One comparison row per report; written as CSV and an aligned text table when ``out_dir`` is given."""
    rows = []
    for p in paths:
        rep = load_report(p)
        agg = rep.get("aggregate", {})
        gap = rep.get("domain_gap", {})
        rows.append(
            {
                "name": rep.get("name") or Path(p).stem,
                "success": agg.get("success", 0.0),
                "precision": agg.get("precision", 0.0),
                "norm_precision": agg.get("norm_precision", 0.0),
                "sequences": agg.get("sequences", 0),
                "mmd2": gap.get("mmd2"),
                "probe_accuracy": gap.get("probe_accuracy"),
                "config_hash": rep.get("config_hash", ""),
            }
        )
    if not rows:
        raise DataError("no reports to merge")

    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        cols = list(rows[0])
        with (d / COMPARISON_CSV).open("w", encoding="utf-8", newline="") as f:
            w = csv.DictWriter(f, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)
        (d / COMPARISON_TXT).write_text(format_table(rows), encoding="utf-8")
    return rows


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def format_table(rows: list[dict]) -> str:
    cols = ["name", "success", "precision", "norm_precision", "mmd2", "probe_accuracy"]
    cells = [cols] + [[_fmt(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"
