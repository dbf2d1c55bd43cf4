"""Run configuration, 17-digit CSV/JSON writers and run manifests."""
from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__

DIGITS = 17


class ConfigError(ValueError):
    pass


class OutputError(OSError):
    pass


# --- schemas -----------------------------------------------------------------

@dataclass(frozen=True)
class Key:
    kind: type
    default: Any = None
    required: bool = False
    check: Callable[[Any], str | None] | None = None


def _positive(v):
    return None if v > 0 else "must be > 0"


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _even4(v):
    return None if v >= 4 and v % 2 == 0 else "must be an even integer >= 4"


def _at_least(k):
    return lambda v: None if v >= k else f"must be >= {k}"


GLOBAL_KEYS = {
    "output_dir": Key(str),
    "digits": Key(int, DIGITS, check=lambda v: None if 1 <= v <= 17 else "must be in 1..17"),
    "threads": Key(int, 1, check=_positive),
    "seed": Key(int),
}

SCHEMAS: dict[str, dict[str, Key]] = {
    "contours enumerate": {
        "window": Key(str, required=True),
        "max_len": Key(int, required=True, check=_even4),
        "anchor": Key(str),
    },
    "exact z": {
        "domain": Key(str, required=True),
        "beta": Key(float, required=True, check=_positive),
        "u": Key(float, 0.0),
        "level": Key(int, 0, check=_nonneg),
        "barred": Key(bool, False),
        "hmax": Key(int),
    },
    "expansion free-energy": {
        "beta": Key(float, required=True, check=_positive),
        "u": Key(float, 0.0),
        "level": Key(int, 0, check=_nonneg),
        "lmax": Key(int, 12, check=_even4),
        "truncated": Key(bool, False),
    },
    "weights scan": {
        "beta": Key(float, required=True, check=_positive),
        "level": Key(int, 0, check=_nonneg),
        "max_len": Key(int, 8, check=_even4),
        "u_grid": Key(str, required=True),
    },
    "layering locate": {
        "beta": Key(float, 2.5, check=_positive),
        "n": Key(int, required=True, check=_at_least(1)),
        "lmax": Key(int, 14, check=_even4),
    },
    "layering table": {
        "beta": Key(float, 2.5, check=_positive),
        "n_max": Key(int, 2, check=_at_least(1)),
        "lmax": Key(int, 14, check=_even4),
    },
    "mcmc run": {
        "size": Key(str, required=True),
        "beta": Key(float, required=True, check=_positive),
        "u": Key(float, 0.0),
        "level": Key(int, 0, check=_nonneg),
        "sweeps": Key(int, required=True, check=_positive),
        "observables": Key(str, "contact"),
        "burn_in": Key(int, check=_nonneg),
        "percolation_every": Key(int, 10, check=_positive),
        "checkpoint": Key(str),
        "resume": Key(str),
    },
}


@dataclass
class RunConfig:
    command: str
    params: dict
    globals: dict
    sources: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"command": self.command, "params": self.params, "globals": self.globals}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        flat = dict(d["params"])
        flat.update({k: v for k, v in d["globals"].items() if v is not None})
        return parse_config(d["command"], file_values=flat)


def _coerce(name: str, key: Key, value):
    if value is None:
        return None
    kind = key.kind
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, str) and value.lstrip("-").isdigit():
                value = int(value)
            else:
                raise ConfigError(f"{name}: expected an integer, got {value!r}")
    elif kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {value!r}") from None
        if not math.isfinite(value):
            raise ConfigError(f"{name}: must be finite")
    elif kind is str and not isinstance(value, str):
        raise ConfigError(f"{name}: expected a string, got {value!r}")
    if key.check is not None:
        msg = key.check(value)
        if msg:
            raise ConfigError(f"{name} {msg} (got {value!r})")
    return value


def load_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise OutputError(f"cannot read config {path}: {e}") from e
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def parse_config(command: str, file_values: dict | None = None, flag_values: dict | None = None) -> RunConfig:
    """Merge file values and flags (flags win), reject unknown keys, check
    types and ranges, and fill defaults."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    schema = {**SCHEMAS[command], **GLOBAL_KEYS}
    file_values = dict(file_values or {})
    flag_values = {k: v for k, v in (flag_values or {}).items() if v is not None}
    for src, vals in (("config file", file_values), ("flags", flag_values)):
        unknown = sorted(set(vals) - set(schema))
        if unknown:
            raise ConfigError(f"unknown key(s) in {src}: {', '.join(unknown)}")
    merged = {}
    for name, key in schema.items():
        v = flag_values.get(name, file_values.get(name, key.default))
        v = _coerce(name, key, v)
        if v is None and key.required:
            raise ConfigError(f"missing required key {name!r}")
        merged[name] = v
    params = {k: merged[k] for k in SCHEMAS[command]}
    globs = {k: merged[k] for k in GLOBAL_KEYS}
    return RunConfig(command, params, globs, {"file": file_values, "flags": flag_values})


# --- number formatting and writers -------------------------------------------

def fmt(x, digits: int = DIGITS) -> str:
    if isinstance(x, np.generic):
        x = x.item()
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, f".{digits}g")
    if hasattr(x, "__float__") and not isinstance(x, str):
        return fmt(float(x), digits)
    return str(x)


def to_json(obj, digits: int = DIGITS, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float printed to `digits` significant digits;
    non-finite floats become strings."""
    if isinstance(obj, np.generic):
        obj = obj.item()
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float) or (hasattr(obj, "__float__") and not isinstance(obj, str)
                                  and not isinstance(obj, (dict, list, tuple))):
        s = fmt(float(obj), digits)
        return s if math.isfinite(float(obj)) else json.dumps(s)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, digits, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{to_json(v, digits, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def csv_text(columns: list[str], rows, digits: int = DIGITS) -> str:
    lines = [",".join(columns)]
    for r in rows:
        if isinstance(r, dict):
            extra = set(r) - set(columns)
            if extra:
                raise ValueError(f"row has keys outside the schema: {sorted(extra)}")
            vals = [r.get(c) for c in columns]
        else:
            vals = list(r)
            if len(vals) != len(columns):
                raise ValueError(f"row has {len(vals)} fields, schema has {len(columns)}")
        lines.append(",".join(fmt(v, digits) for v in vals))
    return "\n".join(lines) + "\n"


def write_text(path, text: str) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(text)
        os.replace(tmp, path)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return path


def write_csv(path, columns: list[str], rows, digits: int = DIGITS) -> Path:
    return write_text(path, csv_text(columns, rows, digits))


def write_json(path, obj, digits: int = DIGITS) -> Path:
    return write_text(path, to_json(obj, digits) + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: RunConfig
    started: float = field(default_factory=time.time)
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def add_input(self, path):
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path):
        self.outputs.append(str(path))

    def write(self, directory) -> Path:
        out = Path(directory) / "manifest.json"
        rec = {
            "code_version": __version__,
            "config": self.config.to_dict(),
            "config_sources": self.config.sources,
            "started": self.started,
            "finished": time.time(),
            "inputs": self.inputs,
            "outputs": [{"path": p, "sha256": sha256_file(p)} for p in self.outputs],
        }
        return write_json(out, rec)
