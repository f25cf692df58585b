from __future__ import annotations

import datetime as _dt
import json
import math
import os
import uuid
from contextvars import ContextVar
from pathlib import Path
from typing import Any

from pdat_config.settings import telemetry_dir

_run_id_ctx: ContextVar[str | None] = ContextVar("run_id", default=None)


def new_run_id() -> str:
    return uuid.uuid4().hex


def get_run_id() -> str:
    """Run id of the current command; one is minted on first use."""
    rid = _run_id_ctx.get()
    if not rid:
        rid = new_run_id()
        _run_id_ctx.set(rid)
    return rid


def set_run_id(rid: str | None) -> None:
    if rid:
        _run_id_ctx.set(rid)


def _telemetry_disabled() -> bool:
    # Evaluated at call time so tests can toggle it with monkeypatch.setenv.
    return os.getenv("PDAT_DISABLE_TELEMETRY", "0").strip().lower() in {"1", "true", "yes"}


def _jsonable(obj: Any) -> Any:
    """Coerce numpy/torch scalars and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else repr(obj)
    item = getattr(obj, "item", None)
    if callable(item):
        try:
            return _jsonable(item())
        except Exception:
            pass
    tolist = getattr(obj, "tolist", None)
    if callable(tolist):
        return _jsonable(tolist())
    return str(obj)


def log_event(
    kind: str,
    name: str,
    args: dict | None = None,
    ok: bool = True,
    ms: int = 0,
    *,
    run_id: str | None = None,
    telemetry_file: str = "pdat-events.jsonl",
) -> None:
    """Append one JSONL event (commands, refits, skips, aborts)."""
    if _telemetry_disabled():
        return

    rec: dict[str, Any] = {
        "ts": _dt.datetime.now(_dt.timezone.utc).isoformat().replace("+00:00", "Z"),
        "kind": kind,
        "name": name,
        "run_id": run_id or get_run_id(),
        "args": {} if args is None else dict(args),
        "ok": bool(ok),
        "ms": int(ms),
    }

    d = telemetry_dir()
    d.mkdir(parents=True, exist_ok=True)
    with (d / telemetry_file).open("a", encoding="utf-8") as f:
        f.write(json.dumps(_jsonable(rec), ensure_ascii=False) + "\n")

def append_record(path: Path, record: dict) -> None:
    """Append one record to a line-delimited metrics stream.

    Records carry no timestamps so two runs with the same seed produce
    byte-identical streams.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as f:
        f.write(json.dumps(_jsonable(record), ensure_ascii=False, sort_keys=True) + "\n")

def read_records(path: Path, *, n: int | None = None) -> list[dict]:
    """Read a JSONL stream; malformed lines are skipped. ``n`` keeps the tail."""
    if not path.exists():
        return []
    lines = path.read_text(encoding="utf-8").splitlines()
    if n is not None:
        lines = lines[-max(int(n), 0):] if n > 0 else []
    out: list[dict] = []
    for line in lines:
        try:
            out.append(json.loads(line))
        except Exception:
            continue
    return out

def events_for(name: str, *, telemetry_file: str = "pdat-events.jsonl", run_id: str | None = None) -> list[dict]:
    """Events with a given name, optionally restricted to one run (newest last)."""
    recs = read_records(telemetry_dir() / telemetry_file)
    return [r for r in recs if r.get("name") == name and (run_id is None or r.get("run_id") == run_id)]
