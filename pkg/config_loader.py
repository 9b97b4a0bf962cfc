# config_loader.py
"""
YAML experiment configuration: one file per experiment with a top-level
`experiment` tag, seed/threads, and one block named after the experiment.
Defaults come from DEFAULTS, `--set a.b=value` overrides are applied on top,
unknown keys are rejected, and physical constraints are checked by building
the domain objects before anything runs.
"""

import copy
import logging
import math
from pathlib import Path

import yaml

from sim_utils import ConfigError, DomainError
from slowpoints.exponent import F_CATALOG, smallball_checkpoints
from slowpoints.gaussfield import build_grid, custom_grid
from slowpoints.spde import SpdeConfig, sigma_from_config

logger = logging.getLogger(__name__)

EXPERIMENTS = ("cov", "sample-h", "simulate", "exponent", "smallball-u", "localize-check", "slowset", "report")

# Mappings whose keys are checked by their own builder rather than against a default
OPEN_BLOCKS = {"sigma", "base"}

SIGMA_KEYS = {"kind", "c", "m", "k", "c0", "c1", "lo", "hi", "base"}

SPDE_DEFAULTS = {
    "dx": 0.005,
    "dt": None,                 # dx^2 / 4
    "horizon": 0.1,
    "half_width": None,         # smallest whole-cell buffer that clears the boundary
    "analysis_width": 1.0,
    "alpha": 0.5,
    "sigma": {"kind": "bounded_sin"},
    "checkpoints": {"start": 2.0 ** -14, "end": 2.0 ** -4, "points_per_octave": 2, "times": None},
}

GAUSSIAN_DEFAULTS = {"ratios": [64.0, 256.0, 1024.0, 4096.0], "density": 32, "trials": 100_000}

DEFAULTS = {
    "cov": {"t": 1.0, "s": 1.0, "x": 0.0, "y": 0.0, "check": False, "oracle_triples": 0},
    "sample-h": {
        "a": 1.0, "b": 32768.0, "points_per_octave": 1, "alpha": None,
        "n_paths": 100_000, "batches": 20,
        "theta": 0.631619, "single_point_trials": 100_000,
    },
    "simulate": {
        "spde": SPDE_DEFAULTS,
        "replicas": 2000, "batch_size": 50,
        "profile": "linearization",
        "t_range": None,
    },
    "exponent": {
        "thetas": [0.4, 0.6, 0.8, 1.0, 1.4, 2.0],
        "ratios": [64.0, 256.0, 1024.0, 4096.0],
        "density": 32, "trials": 100_000,
        "densities": [], "sweep_theta": 1.0,
        "alpha": None, "start": 1.0,
    },
    "smallball-u": {
        "theta": 1.0,
        "eps": [2.0 ** -2, 2.0 ** -4, 2.0 ** -6, 2.0 ** -8],
        "f": "sqrt",
        "points_per_octave": 4,
        "replicas": 2000, "batch_size": 50,
        "spde": {**SPDE_DEFAULTS, "dx": 0.01, "horizon": 0.25, "checkpoints": None},
        # reference density equals points_per_octave so both bands see the same time lattice
        "gaussian": {"ratios": [2.0, 4.0, 8.0, 16.0], "density": 4, "trials": 100_000},
    },
    "localize-check": {
        "times": [1e-3, 2e-3, 5e-3, 0.01, 0.02, 0.05, 0.1],
        "alphas": [0.25, 0.5, 0.75],
    },
    "slowset": {
        "spde": {
            **SPDE_DEFAULTS,
            "dx": 2.0 ** -9, "horizon": 2.0 ** -6,
            "checkpoints": {"start": 2.0 ** -12, "end": 2.0 ** -6, "points_per_octave": 4, "times": None},
        },
        "replicas": 4, "batch_size": 4,
        "window": [2.0 ** -12, 2.0 ** -6],
        "thetas": [1.0, 1.5, 2.0, 3.0],
        "theta_c": None,
        "lambda": GAUSSIAN_DEFAULTS,
        "t_mins": [2.0 ** -8, 2.0 ** -10, 2.0 ** -12],
        "interval": [0.25, 0.75],
        "shells": 4,
        "n_max": None,
    },
    "report": {"in": None},
}

TOP_LEVEL = {"experiment": None, "seed": 0, "stream": 0, "threads": None}


# === MERGING ===

def _merge(defaults, given, path):
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError(path or "config", "expected a mapping")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            raise ConfigError(where, "unknown key")
        if key in OPEN_BLOCKS:
            out[key] = copy.deepcopy(value)
        elif isinstance(defaults[key], dict) and value is not None:
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def parse_override(item):
    """'a.b=value' -> (['a', 'b'], value), the value read as YAML."""
    key, sep, raw = item.partition("=")
    parts = [p for p in key.strip().split(".") if p]
    if not sep or not parts:
        raise ConfigError("--set", f"invalid override {item!r}; expected path=value")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(key, f"unreadable override value {raw!r}: {e}") from e
    if isinstance(value, str):
        # YAML 1.1 reads '1e-3' as a string
        try:
            value = float(value)
        except ValueError:
            pass
    return parts, value


def apply_overrides(payload, overrides, block=None):
    """Dotted overrides; paths not naming a top-level key are taken relative to `block`."""
    for item in overrides or []:
        parts, value = parse_override(item)
        if block and parts[0] not in TOP_LEVEL and parts[0] != block:
            parts = [block, *parts]
        target = payload
        for segment in parts[:-1]:
            if target.get(segment) is None:
                target[segment] = {}
            target = target[segment]
            if not isinstance(target, dict):
                raise ConfigError(".".join(parts), f"cannot traverse into non-mapping at {segment!r}")
        target[parts[-1]] = value
    return payload


def load_config(path=None, experiment=None, overrides=None):
    raw = {}
    if path:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError("config", f"cannot read {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be a mapping")

    tag = raw.get("experiment") or experiment
    if experiment and raw.get("experiment") and raw["experiment"] != experiment:
        raise ConfigError("experiment", f"file is for {raw['experiment']!r}, command is {experiment!r}")
    if tag not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {tag!r}")

    raw = apply_overrides(copy.deepcopy(raw), overrides, tag)
    raw["experiment"] = tag
    schema = {**TOP_LEVEL, tag: DEFAULTS[tag]}
    cfg = _merge(schema, raw, "")
    validate_config(cfg)
    logger.debug("loaded %s config from %s", tag, path or "defaults")
    return cfg


# === BUILDERS ===

def _sigma(block):
    def check(b, where):
        unknown = set(b) - SIGMA_KEYS
        if unknown:
            raise ConfigError(f"{where}.{sorted(unknown)[0]}", "unknown key")
        if isinstance(b.get("base"), dict):
            check(b["base"], f"{where}.base")
    check(block or {}, "sigma")
    return sigma_from_config(block or {})


def checkpoint_grid(block):
    if block.get("times"):
        return custom_grid(block["times"])
    return build_grid(float(block["start"]), float(block["end"]), int(block["points_per_octave"]))


def buffer_width(dx, horizon, analysis_width, alpha, t_last):
    need = analysis_width + 3.0 * math.sqrt(horizon) + t_last ** ((1.0 - alpha) / 2.0)
    return (math.ceil(need / dx) + 1) * dx


def spde_config(block, seed, checkpoints=None):
    """SpdeConfig from a config block; `checkpoints` replaces the block's grid when given."""
    grid = checkpoints if checkpoints is not None else checkpoint_grid(block["checkpoints"] or {})
    dx = float(block["dx"])
    dt = float(block["dt"]) if block.get("dt") is not None else dx ** 2 / 4.0
    horizon = float(block["horizon"])
    width = float(block["analysis_width"])
    alpha = float(block["alpha"])
    half_width = block.get("half_width")
    if half_width is None:
        half_width = buffer_width(dx, horizon, width, alpha, float(grid.times[-1]))
    return SpdeConfig(
        half_width=float(half_width), dx=dx, dt=dt, horizon=horizon,
        sigma=_sigma(block.get("sigma")), checkpoints=grid,
        seed=tuple(seed), analysis_width=width, alpha=alpha,
    )


def seed_of(cfg):
    return (int(cfg["seed"]), int(cfg["stream"]))


def validate_config(cfg):
    """Physical and range checks; raises DomainError naming the offending parameter."""
    tag = cfg["experiment"]
    block = cfg[tag]
    try:
        if tag in ("simulate", "slowset"):
            spde_config(block["spde"], seed_of(cfg))
        if tag == "simulate" and block["profile"] not in ("linearization", "truncation", "both"):
            raise DomainError("profile", f"unknown profile {block['profile']!r}")
        if tag == "smallball-u":
            if block["f"] not in F_CATALOG:
                raise DomainError("f", f"unknown ratio function {block['f']!r}; choose from {sorted(F_CATALOG)}")
            grid = smallball_checkpoints(block["eps"], F_CATALOG[block["f"]], block["points_per_octave"])
            spde_config(block["spde"], seed_of(cfg), checkpoints=grid)
        if tag == "sample-h":
            build_grid(float(block["a"]), float(block["b"]), int(block["points_per_octave"]))
        if tag == "slowset":
            lo, hi = block["window"]
            if not 0 < lo <= hi:
                raise DomainError("window", f"needs 0 < t_min <= t_max, got {block['window']}")
    except DomainError as e:
        param = e.param if e.param.startswith(tag) else f"{tag}.{e.param}"
        raise DomainError(param, str(e).split(": ", 1)[-1]) from e
    return cfg
