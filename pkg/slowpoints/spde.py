# slowpoints/spde.py
"""
Explicit finite-difference integrator for

    d_t u = d_xx u + sigma(u) W_dot,   u(0) = 1,

on [-L, L] with Dirichlet boundary pinned at 1. A coupled run advances three
fields on one noise array per step: u (sigma), u_bar (sigma frozen outside
[-2, 2]) and the linear field H (sigma = 1, zero initial data). All three are
stored as deviations from their boundary value, so u - 1 is integrated
directly and keeps full relative precision while it is small.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd

from sim_utils import (
    WORKLOAD_LIMITS,
    DomainError,
    NumericalError,
    RefusalError,
    make_rng,
    require,
    run_sharded,
    shard_sizes,
)
from slowpoints.gaussfield import TimeGrid

logger = logging.getLogger(__name__)

MIN_REPLICAS = 100
TAIL_CHECKPOINTS = 6
DEFAULT_ALPHA = 0.5
SIGMA_KINDS = ("constant", "linear", "bounded_sin", "clamped")


# === NONLINEARITIES ===

@dataclass(frozen=True)
class SigmaSpec:
    """
    Catalog nonlinearity.

    constant(c):          sigma(x) = c
    linear(m, k):         sigma(x) = m*x + k
    bounded_sin(c0, c1):  sigma(x) = c0 + c1*sin(x)
    clamped(base, lo, hi): sigma(clip(x, lo, hi))
    """
    kind: str
    params: tuple = ()
    base: Optional["SigmaSpec"] = None

    def __post_init__(self):
        require(self.kind in SIGMA_KINDS, "sigma.kind", f"unknown kind {self.kind!r}")
        if self.kind == "clamped":
            require(self.base is not None, "sigma.base", "clamped needs a base nonlinearity")
            lo, hi = self.params
            require(lo < hi, "sigma.params", "clamp needs lo < hi")
        require(self.sigma_at_one != 0.0, "sigma", "sigma(1) must be nonzero")

    def __call__(self, x):
        if self.kind == "constant":
            return np.full_like(np.asarray(x, dtype=float), self.params[0])
        if self.kind == "linear":
            m, k = self.params
            return m * np.asarray(x, dtype=float) + k
        if self.kind == "bounded_sin":
            c0, c1 = self.params
            return c0 + c1 * np.sin(x)
        lo, hi = self.params
        return self.base(np.clip(x, lo, hi))

    @property
    def sigma_at_one(self):
        return float(self(np.array(1.0)))

    @property
    def lipschitz(self):
        if self.kind == "constant":
            return 0.0
        if self.kind == "linear":
            return abs(self.params[0])
        if self.kind == "bounded_sin":
            return abs(self.params[1])
        return self.base.lipschitz

    @property
    def bound(self):
        if self.kind == "constant":
            return abs(self.params[0])
        if self.kind == "linear":
            return None if self.params[0] != 0 else abs(self.params[1])
        if self.kind == "bounded_sin":
            return abs(self.params[0]) + abs(self.params[1])
        lo, hi = self.params
        inner = self.base.bound
        if inner is not None:
            return inner
        if self.base.kind == "linear":
            return float(max(abs(self.base(lo)), abs(self.base(hi))))
        return None

    def clamped(self, lo=-2.0, hi=2.0):
        return SigmaSpec("clamped", (float(lo), float(hi)), self)

    def describe(self):
        if self.kind == "clamped":
            return f"clamped({self.base.describe()}, {self.params[0]:g}, {self.params[1]:g})"
        return f"{self.kind}({', '.join(f'{p:g}' for p in self.params)})"


def constant(c):
    return SigmaSpec("constant", (float(c),))


def linear(m, k=0.0):
    return SigmaSpec("linear", (float(m), float(k)))


def bounded_sin(c1=0.5, c0=None):
    """c0 defaults so that sigma(1) = 1."""
    if c0 is None:
        c0 = 1.0 - c1 * math.sin(1.0)
    return SigmaSpec("bounded_sin", (float(c0), float(c1)))


def sigma_from_config(block):
    kind = block.get("kind", "bounded_sin")
    if kind == "constant":
        return constant(block.get("c", 1.0))
    if kind == "linear":
        return linear(block.get("m", 1.0), block.get("k", 0.0))
    if kind == "bounded_sin":
        return bounded_sin(block.get("c1", 0.5), block.get("c0"))
    if kind == "clamped":
        base = sigma_from_config(block.get("base", {}))
        return base.clamped(block.get("lo", -2.0), block.get("hi", 2.0))
    raise DomainError("sigma.kind", f"unknown kind {kind!r}")


# === CONFIG ===

@dataclass(eq=False)
class SpdeConfig:
    half_width: float
    dx: float
    dt: float
    horizon: float
    sigma: SigmaSpec
    checkpoints: TimeGrid
    seed: tuple = (0, 0)
    analysis_width: float = 1.0
    alpha: float = DEFAULT_ALPHA
    boundary: str = "dirichlet_one"

    def __post_init__(self):
        require(self.dx > 0, "spde.dx", f"must be > 0, got {self.dx}")
        require(self.dt > 0, "spde.dt", f"must be > 0, got {self.dt}")
        require(self.horizon > 0, "spde.horizon", "must be > 0")
        require(self.boundary == "dirichlet_one", "spde.boundary", "only dirichlet_one is supported")
        require(0.0 < self.alpha < 1.0, "spde.alpha", "must lie in (0, 1)")
        require(self.analysis_width > 0, "spde.analysis_width", "must be > 0")
        require(self.dt <= self.dx ** 2 / 4.0, "spde.dt",
                f"stability: dt={self.dt:g} exceeds dx^2/4={self.dx ** 2 / 4.0:g}")
        times = self.checkpoints.times
        require(float(times[-1]) <= self.horizon * (1 + 1e-12), "spde.checkpoints", "must lie in (0, horizon]")
        need = self.analysis_width + 3.0 * math.sqrt(self.horizon) + float(times[-1]) ** ((1.0 - self.alpha) / 2.0)
        require(self.half_width >= need, "spde.half_width",
                f"boundary buffer too thin: need >= {need:.4g}, got {self.half_width:g}")
        cells = self.half_width / self.dx
        require(abs(cells - round(cells)) < 1e-9 * max(1.0, cells), "spde.half_width",
                "must be a whole number of cells so that x = 0 is a grid site")
        width = self.analysis_width / self.dx
        require(abs(width - round(width)) < 1e-9 * max(1.0, width), "spde.analysis_width",
                "must be a whole number of cells")

    @property
    def n_cells(self):
        return 2 * int(round(self.half_width / self.dx)) + 1

    @property
    def origin(self):
        return int(round(self.half_width / self.dx))

    @property
    def tracked(self):
        """Cell indices of the analysis interval [0, analysis_width]; the first is x = 0."""
        n = int(round(self.analysis_width / self.dx))
        return np.arange(self.origin, self.origin + n + 1)

    @property
    def sites(self):
        return (self.tracked - self.origin) * self.dx

    @property
    def stability_margin(self):
        return self.dt / self.dx ** 2

    def snapped_checkpoints(self):
        """Step indices of the checkpoints after snapping to multiples of dt, with snap distances."""
        steps = np.maximum(1, np.rint(self.checkpoints.times / self.dt).astype(np.int64))
        steps, keep = np.unique(steps, return_index=True)
        if len(keep) < len(self.checkpoints):
            logger.warning("%d checkpoints collapsed after snapping to dt", len(self.checkpoints) - len(keep))
        snapped = steps * self.dt
        return steps, snapped, snapped - self.checkpoints.times[np.sort(keep)]


# === STEPPING ===

def _advance(field_, forcing, r, boundary_value):
    lap = np.empty_like(field_)
    lap[..., 1:-1] = field_[..., 2:] - 2.0 * field_[..., 1:-1] + field_[..., :-2]
    out = field_ + forcing
    out[..., 1:-1] += r * lap[..., 1:-1]
    out[..., 0] = boundary_value
    out[..., -1] = boundary_value
    return out


def step(state, noise, config, sigma=None, boundary_value=1.0, index=0):
    """One explicit Euler step of the nonlinear equation on field values `state`; `index` only labels failures."""
    sigma = sigma or config.sigma
    forcing = sigma(state) * math.sqrt(config.dt / config.dx) * noise
    out = _advance(np.asarray(state, dtype=float), forcing, config.dt / config.dx ** 2, boundary_value)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite field at step {index}", diagnostics={"step": int(index)})
    return out


# === COUPLED RUNS ===

@dataclass(eq=False)
class CoupledRun:
    config: SpdeConfig
    times: np.ndarray
    snap_distance: np.ndarray
    series_u: np.ndarray       # u - 1, shape (replicas, checkpoints, tracked sites)
    series_ubar: np.ndarray
    series_h: np.ndarray
    sup_error: np.ndarray      # running sup of |E(., 0)| at each checkpoint, (replicas, checkpoints)
    batch: int = 0
    warnings: list = field(default_factory=list)

    @property
    def replicas(self):
        return int(self.series_u.shape[0])

    @property
    def error(self):
        """Linearization error E = u - 1 - sigma(1) H at every stored point."""
        return self.series_u - self.config.sigma.sigma_at_one * self.series_h


def run_coupled(config, replicas=1, batch=0):
    """Advance u, u_bar and H for `replicas` independent rows on one shared noise stream."""
    require(int(replicas) >= 1, "replicas", "must be >= 1")
    sigma = config.sigma
    sigma_bar = sigma.clamped(-2.0, 2.0) if sigma.kind != "clamped" else sigma
    s1 = sigma.sigma_at_one
    r = config.dt / config.dx ** 2
    amp = math.sqrt(config.dt / config.dx)
    steps, snapped, snap = config.snapped_checkpoints()
    tracked = config.tracked
    o = config.origin
    rng = make_rng(config.seed, batch)

    shape = (int(replicas), config.n_cells)
    u = np.zeros(shape)
    ubar = np.zeros(shape)
    h = np.zeros(shape)
    n_ck = len(steps)
    out_u = np.empty((shape[0], n_ck, tracked.size))
    out_ubar = np.empty_like(out_u)
    out_h = np.empty_like(out_u)
    out_sup = np.empty((shape[0], n_ck))
    running = np.zeros(shape[0])

    k = 0
    for n in range(1, int(steps[-1]) + 1):
        xi = rng.standard_normal(shape) * amp
        u = _advance(u, sigma(1.0 + u) * xi, r, 0.0)
        ubar = _advance(ubar, sigma_bar(1.0 + ubar) * xi, r, 0.0)
        h = _advance(h, xi, r, 0.0)
        for name, values in (("u", u), ("u_bar", ubar), ("h", h)):
            if not np.isfinite(values).all():
                raise NumericalError(f"non-finite {name} at step {n}",
                                     diagnostics={"step": n, "batch": batch, "field": name})
        np.maximum(running, np.abs(u[:, o] - s1 * h[:, o]), out=running)
        if n == steps[k]:
            out_u[:, k] = u[:, tracked]
            out_ubar[:, k] = ubar[:, tracked]
            out_h[:, k] = h[:, tracked]
            out_sup[:, k] = running
            logger.debug("batch %d checkpoint t=%.4g", batch, snapped[k])
            k += 1
    return CoupledRun(config, snapped, snap, out_u, out_ubar, out_h, out_sup, batch)


def run_ensemble(config, replicas, batch_size=None, threads=None):
    size = int(batch_size or WORKLOAD_LIMITS["spde"]["batch_size"])
    jobs = [(config, n, b) for b, n in enumerate(shard_sizes(replicas, size))]
    logger.info("spde: %d replicas in %d batches, %s", replicas, len(jobs), config.sigma.describe())
    return run_sharded(run_coupled, jobs, threads, workload="spde")


def _stack(runs, attr):
    return np.concatenate([getattr(run, attr) for run in runs], axis=0)


# === PROFILES ===

def _l2_with_se(samples, n_batches=10):
    """sqrt(mean(x^2)) per column with a batch-means standard error."""
    sq = samples ** 2
    norm = np.sqrt(sq.mean(axis=0))
    groups = np.array_split(sq, n_batches, axis=0)
    batch_norms = np.stack([np.sqrt(g.mean(axis=0)) for g in groups])
    se = batch_norms.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return norm, se


def _mean_with_se(samples, n_batches=10):
    groups = np.array_split(samples, n_batches, axis=0)
    means = np.stack([g.mean(axis=0) for g in groups])
    return samples.mean(axis=0), means.std(axis=0, ddof=1) / math.sqrt(n_batches)


def loglog_slope(times, values, se=None):
    """Weighted least-squares slope of log(values) against log(times); NaN with < 3 usable points."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    ok = values > 0
    if se is not None:
        se = np.asarray(se, dtype=float)
        ok &= se > 0
    if ok.sum() < 3:
        return {"slope": math.nan, "intercept": math.nan, "points": int(ok.sum())}
    x = np.log(times[ok])
    y = np.log(values[ok])
    w = np.ones_like(x) if se is None else (values[ok] / se[ok]) ** 2
    sw = np.sqrt(w)
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    return {"slope": float(coef[0]), "intercept": float(coef[1]), "points": int(ok.sum())}


def _check_replicas(runs):
    total = sum(run.replicas for run in runs)
    if total < MIN_REPLICAS:
        raise RefusalError("replicas", f"profile needs >= {MIN_REPLICAS} replicas, got {total}",
                           details={"replicas": total})
    return total


def _window_mask(times, t_range, slack=0.0):
    # slack absorbs the snap of checkpoints onto multiples of dt
    if t_range is None:
        return np.ones(len(times), dtype=bool)
    lo, hi = t_range
    return (times >= lo * (1 - 1e-9) - slack) & (times <= hi * (1 + 1e-9) + slack)


def linearization_profile(runs, t_range=None):
    replicas = _check_replicas(runs)
    cfg = runs[0].config
    times = runs[0].times
    err = _stack(runs, "series_u")[:, :, 0] - cfg.sigma.sigma_at_one * _stack(runs, "series_h")[:, :, 0]
    sup = _stack(runs, "sup_error")

    norm, norm_se = _l2_with_se(err)
    sup_mean, sup_se = _mean_with_se(sup)
    abs_mean, _ = _mean_with_se(np.abs(err))
    table = pd.DataFrame({
        "t": times,
        "l2_error": norm,
        "l2_error_se": norm_se,
        "sup_error_mean": sup_mean,
        "sup_error_se": sup_se,
        "abs_error_mean": abs_mean,
        "ratio_to_quarter": norm / times ** 0.25,
    })
    mask = _window_mask(times, t_range, cfg.dt / 2)
    fit = loglog_slope(times[mask], norm[mask], norm_se[mask])
    ratio = table["ratio_to_quarter"].to_numpy()[mask]
    # the six checkpoints nearest t = 0; the ratio must shrink toward t = 0
    tail = ratio[:TAIL_CHECKPOINTS]
    return {
        "sigma": cfg.sigma.describe(),
        "replicas": replicas,
        "table": table,
        "slope": fit["slope"],
        "slope_points": fit["points"],
        "ratio_decreasing_tail": bool(len(tail) >= 2 and np.all(np.diff(tail) > 0)),
        "t_range": list(t_range) if t_range else [float(times[0]), float(times[-1])],
    }


def truncation_profile(runs, t_range=None):
    replicas = _check_replicas(runs)
    cfg = runs[0].config
    times = runs[0].times
    gap = _stack(runs, "series_u")[:, :, 0] - _stack(runs, "series_ubar")[:, :, 0]
    norm, norm_se = _l2_with_se(gap)
    table = pd.DataFrame({
        "t": times,
        "l2_gap": norm,
        "l2_gap_se": norm_se,
        "ratio_to_quarter": norm / times ** 0.25,
    })
    mask = _window_mask(times, t_range, cfg.dt / 2)
    fit = loglog_slope(times[mask], norm[mask], norm_se[mask])
    warnings = []
    if not np.any(norm > 0):
        warnings.append("clamp never active: u and u_bar coincide on every checkpoint")
    ratio = table["ratio_to_quarter"].to_numpy()[mask]
    return {
        "sigma": cfg.sigma.describe(),
        "replicas": replicas,
        "table": table,
        "slope": fit["slope"],
        "slope_points": fit["points"],
        "ratio_vanishing": bool(ratio.size >= 2 and ratio[0] <= ratio[-1]) if np.any(norm > 0) else True,
        "warnings": warnings,
    }


# === FIELD STATISTIC ===

@dataclass(eq=False)
class FieldStatistic:
    sites: np.ndarray          # positions in [0, analysis_width]
    values: np.ndarray         # (replicas, sites)
    window: tuple
    times_used: np.ndarray
    sigma_at_one: float
    analysis_width: float
    resolution: float


def field_statistic(run, window, source="u"):
    """max over checkpoints in window of |u(t,x) - 1| / t^(1/4), per replica and site."""
    lo, hi = window
    require(0 < lo <= hi, "window", f"needs 0 < t_min <= t_max, got {window}")
    mask = _window_mask(run.times, window, run.config.dt / 2)
    if not mask.any():
        raise DomainError("window", f"no checkpoint inside [{lo:g}, {hi:g}]")
    series = {"u": run.series_u, "h": run.series_h, "ubar": run.series_ubar}[source]
    scaled = np.abs(series[:, mask, :]) / run.times[mask][None, :, None] ** 0.25
    cfg = run.config
    return FieldStatistic(
        sites=cfg.sites,
        values=scaled.max(axis=1),
        window=(float(lo), float(hi)),
        times_used=run.times[mask],
        sigma_at_one=cfg.sigma.sigma_at_one,
        analysis_width=cfg.analysis_width,
        resolution=cfg.dx / cfg.analysis_width,
    )


def simulate_field(config, window, replicas=1, source="u"):
    return field_statistic(run_coupled(config, replicas), window, source)


def with_sigma(config, sigma):
    return replace(config, sigma=sigma)
