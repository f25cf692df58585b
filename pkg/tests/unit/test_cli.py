from __future__ import annotations

import json

import numpy as np

from pdat_cli.main import _resolve, build_parser, main, run
from pdat_data.sequences import Sequence
from pdat_eval.harness import score_sequences, write_report
from tests.helpers.fixtures import TINY_OVERRIDES, blob_frame, tiny_corpus


def _sets(overrides: dict) -> list[str]:
    return [arg for k, v in overrides.items() for arg in ("--set", f"{k}={v}")]


def _report(out_dir, shift: float) -> None:
    frames = [blob_frame(64, [(30, 30)], 6) for _ in range(4)]
    boxes = np.tile([24.0, 24.0, 12.0, 12.0], (4, 1))
    seq = Sequence(id="s", frames=frames, boxes=boxes, domain="target")
    write_report(score_sequences({"s": boxes + [shift, 0, 0, 0]}, [seq]), out_dir)


def test_report_command_merges_reports(tmp_path, capsys):
    _report(tmp_path / "baseline", 25.0)
    _report(tmp_path / "progressive", 0.0)
    code = main(["report", str(tmp_path / "baseline"), str(tmp_path / "progressive"), "--out-dir", str(tmp_path / "cmp")])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["rows"] == 2
    assert payload["table"].splitlines()[1].startswith("baseline")
    assert (tmp_path / "cmp" / "comparison.csv").exists()


def test_report_command_with_missing_file(tmp_path):
    out = run(["report", str(tmp_path / "nothing"), "--out-dir", str(tmp_path)])
    assert out["exit_code"] == 3
    assert out["error"]["code"] == "data_error"


def test_unknown_config_key_names_the_key():
    out = run(["train", "--set", "train.bogus=1"])
    assert out["exit_code"] == 2
    assert "train.bogus" in out["error"]["message"]


def test_invalid_value_is_a_config_error():
    out = run(["train", "--set", "train.batch_size=3"])
    assert out["exit_code"] == 2
    assert out["error"]["details"]["key"] == "train.batch_size"


def test_unknown_module_in_disable():
    out = run(["train", "--disable", "agda,memory"])
    assert out["exit_code"] == 2


def test_preprocess_with_unreachable_threshold_fails(tmp_path):
    corpus = tiny_corpus(tmp_path / "corpus")
    out = run(
        ["preprocess", "--in-dir", str(corpus["target"]), "--out-dir", str(tmp_path / "pairs")]
        + _sets({**TINY_OVERRIDES, "data.conf_threshold": 1.0})
    )
    assert out["exit_code"] == 3
    assert "no candidates" in out["error"]["message"]


def test_preprocess_writes_pairs_and_manifest(tmp_path):
    corpus = tiny_corpus(tmp_path / "corpus")
    args = ["preprocess", "--in-dir", str(corpus["target"])] + _sets(TINY_OVERRIDES)
    first = run(args + ["--out-dir", str(tmp_path / "a")])
    second = run(args + ["--out-dir", str(tmp_path / "b")])
    assert first["exit_code"] == 0
    assert first["pairs"] == first["manifest"]["pairs"] > 0
    assert first["manifest"]["frames_scanned"] == 2 * 2
    assert (tmp_path / "a" / "manifest.json").read_text() == (tmp_path / "b" / "manifest.json").read_text()
    assert (tmp_path / "a" / "config.snapshot").exists()


def test_missing_roots_are_data_errors(tmp_path):
    assert run(["preprocess"])["exit_code"] == 3
    assert run(["train"] + _sets(TINY_OVERRIDES))["exit_code"] == 3
    out = run(["eval", "--checkpoint", str(tmp_path / "ck")])
    assert out["exit_code"] == 3 and "data.eval_root" in out["error"]["message"]


def test_common_options_resolve_into_the_config(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("preset=paper\nseed=7\ntrain.epochs=3\n", encoding="utf-8")
    args = build_parser().parse_args(
        ["train", "--config", str(conf), "--set", "train.epochs=4", "--disable", "agda,csda", "--deterministic"]
    )
    cfg = _resolve(args)
    assert cfg.preset == "paper" and cfg.seed == 7
    assert cfg.train.epochs == 4
    assert not cfg.agda.enabled and not cfg.csda.enabled
    assert cfg.train.deterministic and cfg.data.workers == 1 and cfg.eval.workers == 1


def test_bare_config_names_resolve_against_the_config_dir(tmp_path, monkeypatch):
    shipped = tmp_path / "config"
    shipped.mkdir()
    (shipped / "night.conf").write_text("preset=paper\nseed=5\n", encoding="utf-8")
    monkeypatch.setenv("PDAT_CONFIG_DIR", str(shipped))
    elsewhere = tmp_path / "work"
    elsewhere.mkdir()
    monkeypatch.chdir(elsewhere)

    cfg = _resolve(build_parser().parse_args(["train", "--config", "night.conf"]))
    assert cfg.preset == "paper" and cfg.seed == 5

    out = run(["train", "--config", "missing.conf"])
    assert out["exit_code"] == 2
