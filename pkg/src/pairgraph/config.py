"""Experiment configuration files (TOML or JSON)."""
from __future__ import annotations

import itertools
import json
import sys
from pathlib import Path

from pairgraph.harness import ExperimentConfig
from pairgraph.model import GAUSSIAN, NoiseKind

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


SCALAR_KEYS = {"p", "q", "n", "spatial", "temporal", "setting", "alpha",
               "replications", "seed", "removal_fraction", "l_star"}
SWEEP_KEYS = ("gamma", "df", "p_star")
OTHER_KEYS = {"modes", "grid", "spatial_params"}


def load_raw(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse {path.name}: {e}") from None


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _parse_modes(raw):
    out = []
    for m in _as_list(raw):
        parts = str(m).split("/")
        if len(parts) != 2:
            raise ConfigError(f"mode {m!r} must look like 'corrected/estimated'")
        out.append(tuple(parts))
    return tuple(out)


def experiments(raw: dict, replications=None, seed=None) -> list:
    """Expand a raw config into one ExperimentConfig per sweep point.

    ``gamma``, ``df`` and ``p_star`` may be lists; their product is swept in
    file order.  ``df`` selects Student-t noise; ``p_star`` (with ``l_star``,
    default 1) perturbs the cross block.
    """
    unknown = set(raw) - SCALAR_KEYS - set(SWEEP_KEYS) - OTHER_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = {k: raw[k] for k in SCALAR_KEYS & raw.keys() if k != "l_star"}
    if "modes" in raw:
        base["modes"] = _parse_modes(raw["modes"])
    if "grid" in raw:
        base["grid"] = tuple(raw["grid"])
    if "spatial_params" in raw:
        base["spatial_params"] = dict(raw["spatial_params"])
    if replications is not None:
        base["replications"] = replications
    if seed is not None:
        base["seed"] = seed
    l_star = float(raw.get("l_star", 1.0))
    sweeps = [_as_list(raw.get(k, [None])) for k in SWEEP_KEYS]
    out = []
    for gamma, df, p_star in itertools.product(*sweeps):
        kw = dict(base)
        if gamma is not None:
            kw["gamma"] = float(gamma)
        try:
            kw["noise"] = GAUSSIAN if df is None else NoiseKind("student_t", int(df))
            if p_star is not None and float(p_star) > 0:
                kw["perturbation"] = (float(p_star), l_star)
            out.append(ExperimentConfig(**kw))
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
    return out
