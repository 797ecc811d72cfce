"""Flat key-value run configuration and manifests.

The configuration file holds one ``key = value`` pair per line (``#`` starts
a comment).  Lists (``h``, ``dims``) are comma separated; ``beta = inf``
selects zero temperature.  Every run writes its full configuration, the
package version, and the seed to a manifest next to the results so a run can
be reproduced byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .params import ModelParams

_FLOAT_KEYS = {"m", "a", "b", "delta", "J", "beta", "c", "rho", "rho_prop", "c_offset"}
_INT_KEYS = {"d", "nu", "slices_per_unit", "matsubara_cutoff", "samples", "seed",
             "order", "n_max", "threads"}
_LIST_KEYS = {"h", "dims"}
_STR_KEYS = {"backend", "mode", "boundary", "observable", "bc", "check"}

DEFAULTS = {
    "m": 1.0, "a": 1.0, "b": 0.5, "delta": 1.0, "J": 0.25, "beta": 2.0,
    "h": (0.0,), "d": 1, "nu": 1, "dims": (8,),
    "slices_per_unit": 16, "matsubara_cutoff": 50_000, "samples": 100_000,
    "seed": 1, "backend": "reweight", "order": 3, "mode": "lowT",
    "boundary": "periodic", "c": 1.0, "threads": 1, "c_offset": 0.0,
}


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _LIST_KEYS:
        parts = [p for p in raw.replace(",", " ").split() if p]
        return tuple(float(p) if key == "h" else int(p) for p in parts)
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return math.inf if raw.lower() in ("inf", "infinity") else float(raw)
    if key in _STR_KEYS:
        return raw
    raise ConfigError(f"unknown configuration key {key!r}")


def parse_config_text(text: str) -> dict:
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        out[key] = _parse_value(key, raw)
    return out


def load_config(path: str | Path | None, overrides: dict | None = None) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        cfg.update(parse_config_text(Path(path).read_text()))
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    return cfg


def model_params(cfg: dict) -> ModelParams:
    return ModelParams(
        m=cfg["m"], a=cfg["a"], b=cfg["b"], delta=cfg["delta"], J=cfg["J"],
        beta=cfg["beta"], h=tuple(cfg["h"]), d=cfg["d"], nu=cfg["nu"],
        dims=tuple(cfg["dims"]), c_offset=cfg.get("c_offset", 0.0),
    )


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, tuple):
        return list(value)
    return value


def write_manifest(out_dir: Path, subcommand: str, cfg: dict, version: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "version": version,
        "config": {k: _jsonable(v) for k, v in sorted(cfg.items())},
    }
    path = out_dir / f"{subcommand}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
