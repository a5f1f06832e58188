"""Trace data model and file formats.

Traces are stored either as CSV (two columns ``t,x``, header optional) or as
JSON (an array of ``{"t": ..., "x": ...}`` objects). Sanitized traces are
written as JSON ``{"schema_version", "points": [{"t", "z"}], "meta": {...}}``
or as CSV with ``# key=value`` metadata lines followed by ``t,z`` rows.

Floats are written with 17 significant digits so that a read-back is
bit-identical to what was written.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from cipgp.errors import TraceDomainError, TraceParseError

SCHEMA_VERSION = 1
META_KEYS = ("sigma_z2", "seed", "epsilon", "r", "lambda")


def fmt_float(value: float) -> str:
    """17 significant digits; parses back to the identical double."""
    return format(float(value), ".17g")


def _frozen(values: Sequence[float]) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


def _check_points(t: np.ndarray, x: np.ndarray) -> None:
    if t.ndim != 1 or t.shape != x.shape:
        raise TraceDomainError("timestamps and values must be 1-D and equally long")
    if t.size < 2:
        raise TraceDomainError(f"a trace needs at least 2 points, got {t.size}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
        raise TraceDomainError("trace contains non-finite values")
    bad = np.nonzero(np.diff(t) <= 0)[0]
    if bad.size:
        i = int(bad[0])
        raise TraceDomainError(
            f"timestamps must be strictly increasing (t[{i}]={t[i]!r}, t[{i + 1}]={t[i + 1]!r})"
        )


@dataclass(frozen=True, eq=False)
class Trace:
    """Ordered timestamped 1-D locations. Validated on construction."""

    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        t, x = _frozen(self.t), _frozen(self.x)
        _check_points(t, x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)

    @property
    def d(self) -> int:
        return int(self.t.size)

    def __len__(self) -> int:
        return self.d

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return np.array_equal(self.t, other.t) and np.array_equal(self.x, other.x)

    @classmethod
    def from_points(cls, points: Sequence[tuple[float, float]]) -> "Trace":
        if len(points) == 0:
            raise TraceDomainError("a trace needs at least 2 points, got 0")
        t, x = zip(*points)
        return cls(t, x)

    @classmethod
    def synthetic(cls, d: int, spacing: float = 1.0, t0: float = 0.0) -> "Trace":
        """Evenly spaced timestamps with all locations at zero.

        Loss computations only look at timestamps, so this is enough to
        reproduce loss curves without a data file.
        """
        if spacing <= 0:
            raise TraceDomainError("spacing must be positive")
        return cls(t0 + spacing * np.arange(d), np.zeros(d))


@dataclass(frozen=True, eq=False)
class SanitizedTrace:
    t: np.ndarray
    z: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t, z = _frozen(self.t), _frozen(self.z)
        _check_points(t, z)
        meta = dict(self.meta)
        sigma_z2 = meta.get("sigma_z2")
        if sigma_z2 is None or not float(sigma_z2) > 0:
            raise TraceDomainError("sanitized trace metadata needs sigma_z2 > 0")
        if "seed" not in meta:
            raise TraceDomainError("sanitized trace metadata needs a seed")
        for key in META_KEYS:
            meta.setdefault(key, None)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "meta", meta)

    @property
    def d(self) -> int:
        return int(self.t.size)

    def __eq__(self, other):
        if not isinstance(other, SanitizedTrace):
            return NotImplemented
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.z, other.z)
            and self.meta == other.meta
        )


def _infer_format(path, fmt: Optional[str]) -> str:
    if fmt is not None:
        fmt = fmt.lower()
        if fmt not in ("csv", "json"):
            raise ValueError(f"unknown trace format {fmt!r}; expected 'csv' or 'json'")
        return fmt
    ext = os.path.splitext(str(path))[1].lower()
    return "json" if ext == ".json" else "csv"


def _to_float(text: str, where: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise TraceParseError(f"{where}: cannot parse {text!r} as a number") from None


def _parse_csv_rows(text: str, value_col: str) -> tuple[list[float], list[float], dict]:
    ts, vs, meta = [], [], {}
    first = True
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if row[0].lstrip().startswith("#"):
            key, sep, val = row[0].lstrip()[1:].partition("=")
            if sep:
                meta[key.strip()] = val.strip()
            continue
        cells = [c.strip() for c in row]
        if first:
            first = False
            if [c.lower() for c in cells] == ["t", value_col]:
                continue
        if len(cells) != 2:
            raise TraceParseError(f"line {lineno}: expected 2 columns, got {len(cells)}")
        ts.append(_to_float(cells[0], f"line {lineno}"))
        vs.append(_to_float(cells[1], f"line {lineno}"))
    return ts, vs, meta


def _parse_json_points(obj: Any, value_key: str) -> tuple[list[float], list[float]]:
    if not isinstance(obj, list):
        raise TraceParseError("expected a JSON array of point objects")
    ts, vs = [], []
    for i, item in enumerate(obj):
        if not isinstance(item, dict) or "t" not in item or value_key not in item:
            raise TraceParseError(f"point {i}: expected an object with keys 't' and {value_key!r}")
        for key in ("t", value_key):
            if isinstance(item[key], bool) or not isinstance(item[key], (int, float)):
                raise TraceParseError(f"point {i}: {key!r} is not a number")
        ts.append(float(item["t"]))
        vs.append(float(item[value_key]))
    return ts, vs


def _load_json(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"invalid JSON: {exc}") from None


def read_trace(path, format: Optional[str] = None) -> Trace:
    """Read a trace from CSV or JSON; format is inferred from the suffix if omitted."""
    fmt = _infer_format(path, format)
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if fmt == "csv":
        ts, xs, _ = _parse_csv_rows(text, "x")
    else:
        ts, xs = _parse_json_points(_load_json(text), "x")
    if len(ts) < 2:
        raise TraceDomainError(f"a trace needs at least 2 points, got {len(ts)}")
    return Trace(ts, xs)


def write_trace(trace: Trace, path, format: Optional[str] = None) -> None:
    fmt = _infer_format(path, format)
    if fmt == "csv":
        body = "t,x\n" + "".join(f"{fmt_float(a)},{fmt_float(b)}\n" for a, b in zip(trace.t, trace.x))
    else:
        body = _dump_json([{"t": _Raw(a), "x": _Raw(b)} for a, b in zip(trace.t, trace.x)])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(body)


class _Raw:
    """Float wrapper serialized with 17 significant digits."""

    def __init__(self, value):
        self.value = float(value)


def _render(obj: Any, indent: str = "") -> str:
    # json.dumps uses repr() for floats; this keeps the documented 17-digit form.
    if isinstance(obj, _Raw):
        if not math.isfinite(obj.value):
            raise ValueError("cannot serialize a non-finite value")
        return fmt_float(obj.value)
    if isinstance(obj, float):
        return _render(_Raw(obj))
    if isinstance(obj, dict):
        inner = indent + "  "
        items = [f"{inner}{json.dumps(str(k))}: {_render(v, inner)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + indent + "}" if items else "{}"
    if isinstance(obj, (list, tuple)):
        if obj and all(isinstance(v, dict) for v in obj):
            # one flat record per line
            inner = indent + "  "
            rows = [
                "{" + ", ".join(f"{json.dumps(str(k))}: {_render(x)}" for k, x in v.items()) + "}"
                for v in obj
            ]
            return "[\n" + ",\n".join(inner + r for r in rows) + "\n" + indent + "]"
        return "[" + ", ".join(_render(v, indent) for v in obj) + "]"
    if isinstance(obj, (np.floating,)):
        return _render(_Raw(obj))
    if isinstance(obj, (np.integer,)):
        return str(int(obj))
    if isinstance(obj, np.ndarray):
        return _render(obj.tolist(), indent)
    return json.dumps(obj)


def _dump_json(obj: Any) -> str:
    return _render(obj) + "\n"


def dumps_report(obj: Any) -> str:
    """Serialize a report dict as JSON with full-precision floats."""
    return _dump_json(obj)


def write_sanitized(trace: SanitizedTrace, path, format: Optional[str] = None) -> None:
    """Write a sanitized trace; sigma_z2 and seed are always present in the output."""
    fmt = _infer_format(path, format)
    meta = {k: (_Raw(v) if isinstance(v, (float, np.floating)) else v) for k, v in trace.meta.items()}
    if fmt == "json":
        body = _dump_json(
            {
                "schema_version": SCHEMA_VERSION,
                "points": [{"t": _Raw(a), "z": _Raw(b)} for a, b in zip(trace.t, trace.z)],
                "meta": meta,
            }
        )
    else:
        lines = [f"# schema_version={SCHEMA_VERSION}"]
        lines += [f"# {k}={_render(v)}" for k, v in meta.items()]
        lines.append("t,z")
        lines += [f"{fmt_float(a)},{fmt_float(b)}" for a, b in zip(trace.t, trace.z)]
        body = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(body)


def read_sanitized(path, format: Optional[str] = None) -> SanitizedTrace:
    fmt = _infer_format(path, format)
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if fmt == "json":
        obj = _load_json(text)
        if not isinstance(obj, dict) or "points" not in obj or "meta" not in obj:
            raise TraceParseError("sanitized trace JSON needs 'points' and 'meta'")
        ts, zs = _parse_json_points(obj["points"], "z")
        meta = dict(obj["meta"])
    else:
        ts, zs, raw = _parse_csv_rows(text, "z")
        raw.pop("schema_version", None)
        meta = {k: json.loads(v) for k, v in raw.items()}
    return SanitizedTrace(ts, zs, meta)
