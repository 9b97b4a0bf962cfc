# slowpoints/gaussfield.py

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sim_utils import (
    WORKLOAD_LIMITS,
    DomainError,
    NumericalError,
    make_rng,
    require,
    run_sharded,
    shard_sizes,
)
from slowpoints.kernels import cov_h_alpha_temporal, cov_h_temporal, var_h

logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-12, 1e-10)
REPRODUCTION_TOL = 1e-8
SCALING_TOL = 1e-10


# === TYPES ===

@dataclass(eq=False)
class TimeGrid:
    times: np.ndarray
    spacing: str = "custom"
    points_per_octave: Optional[int] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        require(self.times.size >= 1, "grid.times", "needs at least one point")
        require(bool(np.all(self.times > 0)), "grid.times", "all times must be > 0")
        require(bool(np.all(np.diff(self.times) > 0)), "grid.times", "must be strictly increasing")
        if self.spacing == "geometric" and self.times.size > 2:
            ratios = self.times[1:] / self.times[:-1]
            require(bool(np.ptp(ratios) <= 1e-12 * ratios[0]), "grid.times", "geometric ratios drift")

    def __len__(self):
        return int(self.times.size)

    def key(self):
        return (self.spacing, self.points_per_octave, tuple(self.times.tolist()))

    def prefix_length(self, t_end):
        """Number of grid points up to and including t_end (which must be a grid point)."""
        idx = int(np.searchsorted(self.times, t_end * (1.0 - 1e-12)))
        require(idx < len(self) and abs(self.times[idx] - t_end) <= 1e-9 * t_end,
                "ratio", f"{t_end} is not a point of the grid")
        return idx + 1


@dataclass(eq=False)
class CovFactor:
    grid: TimeGrid
    lower_factor: np.ndarray
    jitter_applied: float = 0.0
    alpha: Optional[float] = None
    reproduction_error: float = 0.0


@dataclass(eq=False)
class PathBatch:
    grid: TimeGrid
    values: np.ndarray
    seed_provenance: tuple = field(default_factory=tuple)


# === GRIDS ===

def build_grid(a, b, points_per_octave=32):
    require(a > 0, "a", f"must be > 0, got {a}")
    require(b >= a, "b", f"must be >= a={a}, got {b}")
    require(int(points_per_octave) >= 1, "points_per_octave", "must be >= 1")
    ppo = int(points_per_octave)
    if b == a:
        return TimeGrid(np.array([float(a)]), "geometric", ppo)
    n = max(1, int(math.ceil(ppo * math.log2(b / a) - 1e-9)))
    times = a * (b / a) ** (np.arange(n + 1) / n)
    times[0], times[-1] = a, b
    return TimeGrid(times, "geometric", ppo)


def custom_grid(times):
    return TimeGrid(np.sort(np.asarray(times, dtype=float)), "custom", None)


# === FACTORIZATION ===

def covariance_matrix(grid, alpha=None):
    t = grid.times
    if alpha is None:
        return cov_h_temporal(t[:, None], t[None, :])
    n = len(grid)
    m = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            m[i, j] = m[j, i] = cov_h_alpha_temporal(t[i], t[j], alpha)
    return m


def factor_covariance(grid, alpha=None, max_size=None):
    cap = int(max_size or WORKLOAD_LIMITS["gaussfield"]["max_grid"])
    require(len(grid) <= cap, "grid", f"{len(grid)} points exceeds the cap of {cap}")
    m = covariance_matrix(grid, alpha)
    scale = float(np.max(np.abs(m)))
    eye = np.eye(len(grid))
    top = float(np.max(np.diag(m)))

    for step in JITTER_LADDER:
        jitter = step * top
        try:
            lower = np.linalg.cholesky(m + jitter * eye)
        except np.linalg.LinAlgError:
            logger.debug("cholesky failed with jitter %.3g, escalating", jitter)
            continue
        err = float(np.max(np.abs(lower @ lower.T - m))) / scale
        if err <= REPRODUCTION_TOL:
            if jitter:
                logger.warning("covariance on %d points needed jitter %.3g", len(grid), jitter)
            return CovFactor(grid, lower, jitter, alpha, err)

    eig = np.linalg.eigvalsh(m)
    raise NumericalError(
        f"covariance factorization failed on {len(grid)} points after jitter {JITTER_LADDER[-1]:g}",
        diagnostics={
            "min_eigenvalue": float(eig[0]),
            "max_eigenvalue": float(eig[-1]),
            "condition": float(eig[-1] / eig[0]) if eig[0] > 0 else math.inf,
        },
    )


# === SAMPLING ===

def sample_paths(factor, n_paths, seed, shard=0):
    require(int(n_paths) >= 1, "n_paths", f"must be >= 1, got {n_paths}")
    rng = make_rng(seed, shard)
    z = rng.standard_normal((int(n_paths), len(factor.grid)))
    return PathBatch(factor.grid, z @ factor.lower_factor.T, (tuple(seed), shard))


def _band_ratio(values, times):
    return np.abs(values) / times ** 0.25


def survival_indicator(batch, theta):
    """Per-path flag: |H(t_k)| <= theta * t_k^(1/4) at every grid point."""
    require(theta > 0, "theta", f"must be > 0, got {theta}")
    return np.all(_band_ratio(batch.values, batch.grid.times) <= theta, axis=1)


def _shard_hits(factor, seed, shard, size, thetas, prefixes, columns):
    batch = sample_paths(factor, size, seed, shard)
    times = batch.grid.times
    ratio = batch.values
    np.abs(ratio, out=ratio)
    ratio /= times ** 0.25
    if columns is not None:
        ratio = ratio[:, columns]
    np.maximum.accumulate(ratio, axis=1, out=ratio)
    worst = ratio[:, np.asarray(prefixes) - 1]
    return (worst[None, :, :] <= np.asarray(thetas)[:, None, None]).sum(axis=1)


def survival_counts(factor, thetas, prefixes, n_paths, seed, threads=None, shard_size=None, columns=None):
    """
    hits[i, j] = number of paths staying in the theta_i band over the first
    prefixes[j] grid points (of `columns` if given). One sample set serves all
    (theta, prefix) pairs, so counts are monotone in both.
    """
    require(int(n_paths) >= 1, "trials", f"must be >= 1, got {n_paths}")
    size = int(shard_size or WORKLOAD_LIMITS["gaussfield"]["shard_size"])
    jobs = [
        (factor, seed, k, n, thetas, prefixes, columns)
        for k, n in enumerate(shard_sizes(n_paths, size))
    ]
    parts = run_sharded(_shard_hits, jobs, threads, workload="gaussfield")
    hits = np.zeros((len(thetas), len(prefixes)), dtype=np.int64)
    for part in parts:
        hits += part.astype(np.int64)
    return hits


# === CHECKS ===

def scaling_check(c, grid):
    require(c > 0, "c", f"must be > 0, got {c}")
    t = grid.times
    scaled = cov_h_temporal(c * t[:, None], c * t[None, :])
    base = math.sqrt(c) * cov_h_temporal(t[:, None], t[None, :])
    return float(np.max(np.abs(scaled - base)))


def scaling_bound(c, grid):
    return SCALING_TOL * math.sqrt(c) * var_h(float(grid.times[-1]))


def covariance_calibration(factor, n_paths, seed, n_batches=20):
    """Batch-mean estimate of E[H(t_i)H(t_j)] with standard errors and z-scores."""
    require(int(n_batches) >= 2, "n_batches", "needs at least two batches")
    require(int(n_paths) >= int(n_batches), "n_paths", "needs at least one path per batch")
    target = covariance_matrix(factor.grid, factor.alpha)
    per = int(n_paths) // int(n_batches)
    estimates = []
    for k in range(int(n_batches)):
        v = sample_paths(factor, per, seed, shard=k).values
        estimates.append(v.T @ v / per)
    estimates = np.stack(estimates)
    mean = estimates.mean(axis=0)
    se = estimates.std(axis=0, ddof=1) / math.sqrt(n_batches)
    z = np.abs(mean - target) / np.where(se > 0, se, np.inf)
    return {
        "empirical": mean,
        "target": target,
        "se": se,
        "z": z,
        "max_abs_z": float(np.max(z)),
        "n_paths": per * int(n_batches),
    }


def check_factor(factor):
    """Relative max-norm reproduction error against the exact covariance."""
    m = covariance_matrix(factor.grid, factor.alpha)
    err = float(np.max(np.abs(factor.lower_factor @ factor.lower_factor.T - m))) / float(np.max(np.abs(m)))
    if err > REPRODUCTION_TOL:
        raise DomainError("factor", f"reproduction error {err:.3g} above {REPRODUCTION_TOL:g}")
    return err
