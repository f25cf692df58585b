from __future__ import annotations

from typing import Sequence

from pdat_common.errors import ConfigError, DataError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce_int(value, *, name: str = "value", min_value: int | None = None) -> int:
    try:
        iv = int(str(value).strip()) if isinstance(value, str) else int(value)
    except Exception:
        raise ConfigError("{0} not an integer: {1!r}".format(name, value), details={"key": name})
    if min_value is not None and iv < min_value:
        raise ConfigError("{0} below minimum {1}: {2}".format(name, min_value, iv), details={"key": name})
    return iv


def coerce_float(value, *, name: str = "value", positive: bool = False) -> float:
    try:
        fv = float(value)
    except Exception:
        raise ConfigError("{0} not a float: {1!r}".format(name, value), details={"key": name})
    if positive and not fv > 0:
        raise ConfigError("{0} must be positive, got {1}".format(name, fv), details={"key": name})
    return fv


def coerce_bool(value, *, name: str = "value") -> bool:
    if isinstance(value, bool):
        return value
    s = str(value).strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise ConfigError("{0} not a boolean: {1!r}".format(name, value), details={"key": name})


def coerce_str(value, *, name: str = "value", choices: Sequence[str] | None = None) -> str:
    s = str(value).strip()
    if choices is not None and s not in choices:
        raise ConfigError(
            "{0} must be one of {1}, got {2!r}".format(name, ", ".join(choices), s), details={"key": name}
        )
    return s


def coerce_list(value, item, *, name: str = "value") -> tuple:
    """Comma-separated text (or a sequence) into a tuple coerced with ``item``."""
    if isinstance(value, str):
        parts = [p.strip() for p in value.replace(";", ",").split(",") if p.strip()]
    else:
        parts = list(value)
    if not parts:
        raise ConfigError("{0} must not be empty".format(name), details={"key": name})
    return tuple(item(p, name=name) for p in parts)


def validate_box_in_frame(box: Sequence[float], width: int, height: int, *, what: str = "box") -> None:
    """Axis-aligned (x, y, w, h) pixel box with positive size, inside the frame."""
    if len(box) != 4:
        raise DataError("{0} must have 4 values, got {1!r}".format(what, box))
    x, y, w, h = (float(v) for v in box)
    if not (w > 0 and h > 0):
        raise DataError("{0} has non-positive size: {1!r}".format(what, tuple(box)))
    eps = 1e-3
    if x < -eps or y < -eps or x + w > width + eps or y + h > height + eps:
        raise DataError(
            "{0} {1!r} outside frame {2}x{3}".format(what, tuple(box), width, height),
            details={"box": list(box), "frame": [width, height]},
        )


def clip_box(box: Sequence[float], width: int, height: int) -> tuple[float, float, float, float]:
    """Clip an (x, y, w, h) box to the frame; the result may be degenerate."""
    x, y, w, h = (float(v) for v in box)
    x1 = min(max(x, 0.0), float(width))
    y1 = min(max(y, 0.0), float(height))
    x2 = min(max(x + w, 0.0), float(width))
    y2 = min(max(y + h, 0.0), float(height))
    return (x1, y1, max(x2 - x1, 0.0), max(y2 - y1, 0.0))
