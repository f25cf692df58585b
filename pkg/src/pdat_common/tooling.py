from __future__ import annotations

import functools
import inspect
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from pdat_common.errors import PdatError, typed_error
from pdat_common.telemetry import get_run_id, log_event, new_run_id, set_run_id

logger = logging.getLogger(__name__)


def sanitize_args_for_log(args: dict | None) -> dict:
    """Keep log args small: configs become their hash, paths become strings."""
    out: dict[str, Any] = {}
    for k, v in (args or {}).items():
        if hasattr(v, "config_hash") and callable(v.config_hash):
            out[str(k)] = {"config_hash": v.config_hash()}
        elif isinstance(v, Path):
            out[str(k)] = str(v)
        elif isinstance(v, (str, int, float, bool)) or v is None:
            out[str(k)] = v
        elif isinstance(v, (list, tuple)) and len(v) <= 16:
            out[str(k)] = [str(x) for x in v]
        else:
            out[str(k)] = type(v).__name__
    return out


def _bound_args(fn: Callable[..., Any], args: tuple[Any, ...], kwargs: dict[str, Any]) -> dict[str, Any]:
    """Bind positional/keyword args to parameter names for logging."""
    try:
        sig = inspect.signature(fn)
        bound = sig.bind_partial(*args, **kwargs)
        return dict(bound.arguments)
    except Exception:
        d: dict[str, Any] = {}
        d.update(kwargs)
        if args:
            d["_args"] = [type(a).__name__ for a in args]
        return d


def _compute_out_stats(payload: Any) -> dict[str, Any]:
    """Lightweight output metadata for the event log."""
    stats: dict[str, Any] = {"type": type(payload).__name__}
    try:
        if isinstance(payload, dict):
            stats["keys"] = len(payload)
            err = payload.get("error")
            if isinstance(err, dict):
                stats["error_code"] = err.get("code")
            for key in ("pairs", "rows", "sequences", "iterations"):
                if isinstance(payload.get(key), int):
                    stats[key] = payload[key]
    except Exception:
        # Never fail a command because stats failed.
        return stats
    return stats


@dataclass(frozen=True)
class InstrumentConfig:
    kind: str
    name: str
    telemetry_file: str = "pdat-events.jsonl"

    # fresh run id for every invocation
    new_run_id_per_call: bool = True

    # attach run_id to returned dict
    attach_run_id: bool = True


def instrument_command(cfg: InstrumentConfig):
    """Decorator for CLI commands.

    The wrapped command always returns a dict. Failures become typed-error
    envelopes carrying ``exit_code``; successes carry ``exit_code`` 0.
    """

    def decorator(fn: Callable[..., dict]):
        fn_sig = inspect.signature(fn)

        @functools.wraps(fn)
        def wrapper(*args: Any, **kwargs: Any) -> dict:
            run_id = get_run_id()
            if cfg.new_run_id_per_call or not run_id:
                run_id = new_run_id()
                set_run_id(run_id)

            t0 = time.perf_counter()
            args_for_log: dict[str, Any] = {"args": sanitize_args_for_log(_bound_args(fn, args, kwargs))}

            try:
                payload = fn(*args, **kwargs)
                if not isinstance(payload, dict):
                    payload = {"result": payload}
                payload.setdefault("exit_code", 0)
            except PdatError as e:
                logger.error("%s failed (%s): %s", cfg.name, e.code, e.message)
                payload = e.to_envelope(exit_code=e.exit_code)
            except Exception as e:
                logger.exception("%s failed", cfg.name)
                payload = typed_error("internal", str(e), exit_code=1)

            ms = int((time.perf_counter() - t0) * 1000)
            ok = "error" not in payload
            if not ok:
                args_for_log["error"] = payload.get("error")
            args_for_log["out"] = _compute_out_stats(payload)

            log_event(
                cfg.kind,
                cfg.name,
                args_for_log,
                ok=ok,
                ms=ms,
                run_id=run_id,
                telemetry_file=cfg.telemetry_file,
            )

            if cfg.attach_run_id:
                payload.setdefault("run_id", run_id)
            return payload

        wrapper.__signature__ = fn_sig  # type: ignore[attr-defined]
        return wrapper

    return decorator
