# slowpoints/exponent.py
"""
Small-ball survival of H(., 0) inside the band |H(t)| <= theta t^(1/4), and the
regression of log survival on log ratio that yields the boundary-crossing
exponent lambda(theta).

    p(theta, R) = P{ |H(t,0)| <= theta t^(1/4) for all t in [a, aR] } ~ R^(-lambda(theta))

The law of the event depends only on R (Brownian-type scaling), so grids are
built on [1, R] unless a localized field is requested.
"""

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from sim_utils import DomainError, RefusalError, require
from slowpoints.gaussfield import build_grid, custom_grid, factor_covariance, survival_counts

logger = logging.getLogger(__name__)

MIN_HITS = 30
DEFAULT_RATIOS = (2.0 ** 6, 2.0 ** 8, 2.0 ** 10, 2.0 ** 12)
DEFAULT_DENSITY = 32
DEFAULT_TRIALS = 100_000
LAMBDA_TARGET = 0.5
Z95 = 1.959963984540054

F_CATALOG = {
    "sqrt": lambda eps: eps ** 0.5,
    "quarter": lambda eps: eps ** 0.25,
}


# === INTERVALS ===

def wilson_interval(hits, trials, z=Z95):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return (0.0, 1.0)
    p = hits / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2.0 * trials)) / denom
    margin = z * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)) / denom
    return (max(0.0, center - margin), min(1.0, center + margin))


# === RECORDS ===

@dataclass
class SurvivalRecord:
    theta: float
    ratio: float
    grid_density: Optional[int]
    trials: int
    hits: int
    start: float = 1.0
    alpha: Optional[float] = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        require(self.trials >= 1, "trials", f"must be >= 1, got {self.trials}")
        require(0 <= self.hits <= self.trials, "hits", f"must lie in [0, {self.trials}], got {self.hits}")
        if self.hits == 0 and not self.warnings:
            self.warnings.append("exponent lower bound only: no survivors")

    @property
    def p_hat(self):
        return self.hits / self.trials

    @property
    def ci(self):
        return wilson_interval(self.hits, self.trials)

    def as_row(self):
        lo, hi = self.ci
        return {
            "theta": self.theta,
            "ratio": self.ratio,
            "grid_density": self.grid_density,
            "trials": self.trials,
            "hits": self.hits,
            "p_hat": self.p_hat,
            "ci_low": lo,
            "ci_high": hi,
            "alpha": self.alpha,
        }


def records_frame(records):
    return pd.DataFrame([r.as_row() for r in records])


@dataclass(frozen=True)
class SurvivalBudget:
    ratios: tuple = DEFAULT_RATIOS
    density: int = DEFAULT_DENSITY
    trials: int = DEFAULT_TRIALS


# === ESTIMATION ===

@functools.lru_cache(maxsize=32)
def _factor(start, ratio, density, alpha):
    return factor_covariance(build_grid(start, start * ratio, density), alpha)


def _check_alpha(alpha, start):
    if alpha is not None:
        require(0.0 < alpha < 1.0, "alpha", f"must lie in (0, 1), got {alpha}")
    else:
        require(start == 1.0, "start", "only the localized field needs an explicit start time")


def estimate_survival(theta, ratio, density, trials, seed, threads=None, alpha=None, start=1.0):
    """
    Fraction of `trials` exact Gaussian paths on the geometric grid [start, start*ratio]
    staying inside the theta band. `alpha` switches to the localized field H_alpha,
    whose law is not scale-free, so `start` then fixes the absolute time window.
    """
    require(theta > 0, "theta", f"must be > 0, got {theta}")
    require(ratio >= 1, "ratio", f"must be >= 1, got {ratio}")
    require(int(trials) >= 1, "trials", f"must be >= 1, got {trials}")
    _check_alpha(alpha, start)
    factor = _factor(float(start), float(ratio), int(density), alpha)
    hits = survival_counts(factor, [theta], [len(factor.grid)], int(trials), seed, threads)
    record = SurvivalRecord(float(theta), float(ratio), int(density), int(trials), int(hits[0, 0]),
                            float(start), alpha)
    logger.debug("theta=%g R=%g: %d/%d", theta, ratio, record.hits, record.trials)
    return record


def survival_table(thetas, ratios, density, trials, seed, threads=None, alpha=None, start=1.0):
    """
    Records for every (theta, ratio) from one nested sampling pass: each path is
    drawn once on [start, start*max(ratios)] and checked on every prefix, so p_hat
    is exactly monotone in both theta and ratio.
    """
    thetas = [float(t) for t in thetas]
    ratios = sorted(float(r) for r in ratios)
    require(len(thetas) >= 1 and all(t > 0 for t in thetas), "thetas", "need at least one theta > 0")
    require(len(ratios) >= 1 and ratios[0] >= 1, "ratios", "need ratios >= 1")
    _check_alpha(alpha, start)
    factor = _factor(float(start), ratios[-1], int(density), alpha)
    prefixes = [factor.grid.prefix_length(start * r) for r in ratios]
    hits = survival_counts(factor, thetas, prefixes, int(trials), seed, threads)
    records = [
        SurvivalRecord(th, r, int(density), int(trials), int(hits[i, j]), float(start), alpha)
        for i, th in enumerate(thetas)
        for j, r in enumerate(ratios)
    ]
    for rec in records:
        if rec.hits == 0:
            logger.warning("theta=%g R=%g: no survivors in %d trials", rec.theta, rec.ratio, rec.trials)
    return records


def density_sweep(theta, ratio, densities, trials, seed, threads=None):
    """
    Survival at each grid density, using paths sampled jointly on the finest grid.
    Coarser grids are subsets of the finest one, so p_hat can only drop as density grows.
    """
    densities = sorted(int(d) for d in densities)
    fine = _factor(1.0, float(ratio), densities[-1], None)
    n_fine = len(fine.grid) - 1
    records = []
    for d in densities:
        n = len(build_grid(1.0, ratio, d)) - 1
        if n_fine % n:
            raise DomainError("densities", f"grid at density {d} is not a subset of density {densities[-1]}")
        columns = np.arange(n + 1) * (n_fine // n)
        hits = survival_counts(fine, [theta], [n + 1], int(trials), seed, threads, columns=columns)
        records.append(SurvivalRecord(float(theta), float(ratio), d, int(trials), int(hits[0, 0])))
    return records


# === FITS ===

@dataclass
class ExponentFit:
    theta: float
    lambda_hat: float
    se: float
    r_squared: float
    ratios_used: list
    intercept: float = 0.0
    warnings: list = field(default_factory=list)

    def as_dict(self):
        return {
            "theta": self.theta,
            "lambda_hat": self.lambda_hat,
            "se": self.se,
            "r_squared": self.r_squared,
            "ratios_used": list(self.ratios_used),
            "intercept": self.intercept,
            "warnings": list(self.warnings),
        }


def weighted_loglog(x, p_hat, trials):
    """
    Weighted least squares of log p_hat on x with delta-method weights
    1/Var(log p_hat) ~ p_hat * n / (1 - p_hat). Returns slope, intercept, se, r^2.
    The slope se is inflated by sqrt(chi2/dof) when the scatter exceeds the binomial noise.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p_hat, dtype=float)
    n = np.asarray(trials, dtype=float)
    y = np.log(p)
    w = p * n / np.maximum(1.0 - p, 1.0 / n)
    design = np.column_stack([x, np.ones_like(x)])
    xtw = design.T * w
    cov = np.linalg.inv(xtw @ design)
    coef = cov @ (xtw @ y)
    resid = y - design @ coef
    chi2 = float(np.sum(w * resid ** 2))
    dof = max(len(x) - 2, 1)
    scale = max(1.0, chi2 / dof)
    ybar = float(np.sum(w * y) / np.sum(w))
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1.0 - chi2 / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), float(math.sqrt(cov[0, 0] * scale)), r2


def fit_lambda(records):
    """lambda_hat is the slope of log p_hat against -log R over records sharing one theta."""
    require(len(records) >= 3, "records", f"need >= 3 ratios, got {len(records)}")
    thetas = {r.theta for r in records}
    require(len(thetas) == 1, "records", f"mixed thetas {sorted(thetas)}")
    require(len({r.grid_density for r in records}) == 1, "records", "grid densities differ within one fit")
    ratios = [r.ratio for r in records]
    require(len(set(ratios)) == len(ratios), "records", "duplicate ratios")

    short = [r for r in records if r.hits < MIN_HITS]
    if short:
        need = {r.ratio: math.ceil(r.trials * MIN_HITS / max(r.hits, 1)) for r in short}
        listing = ", ".join(f"R={k:g} needs ~{v} trials" for k, v in need.items())
        raise RefusalError("trials", f"fewer than {MIN_HITS} hits at theta={records[0].theta:g}: {listing}",
                           details={"under_hit": need, "records": [r.as_row() for r in records]})

    order = np.argsort(ratios)
    recs = [records[i] for i in order]
    slope, intercept, se, r2 = weighted_loglog(
        [-math.log(r.ratio) for r in recs],
        [r.p_hat for r in recs],
        [r.trials for r in recs],
    )
    fit = ExponentFit(recs[0].theta, slope, se, r2, [r.ratio for r in recs], intercept)
    if slope <= 0:
        fit.warnings.append(f"non-positive exponent estimate {slope:.4g}")
        logger.warning("theta=%g: lambda_hat=%.4g is not positive", fit.theta, slope)
    return fit


# === CURVES ===

@dataclass
class ExponentCurve:
    entries: list
    theta_c_hat: Optional[float] = None
    theta_c_interval: tuple = (None, None)
    bracket_gap: Optional[float] = None
    monotone_ok: bool = True
    convex_ok: bool = True
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def thetas(self):
        return np.array([e.theta for e in self.entries])

    @property
    def lambdas(self):
        return np.array([e.lambda_hat for e in self.entries])

    @property
    def ses(self):
        return np.array([e.se for e in self.entries])

    def as_dict(self):
        return {
            "entries": [e.as_dict() for e in self.entries],
            "theta_c_hat": self.theta_c_hat,
            "theta_c_interval": list(self.theta_c_interval),
            "bracket_gap": self.bracket_gap,
            "monotone_ok": self.monotone_ok,
            "convex_ok": self.convex_ok,
            "violations": list(self.violations),
            "warnings": list(self.warnings),
        }


def _crossing(thetas, values, target=LAMBDA_TARGET):
    """theta where a monotone cubic through (thetas, values) meets target, or None."""
    g = np.asarray(values, dtype=float) - target
    exact = np.flatnonzero(g == 0.0)
    if exact.size:
        return float(thetas[exact[0]])
    change = np.flatnonzero(np.sign(g[:-1]) != np.sign(g[1:]))
    if not change.size:
        return None
    k = int(change[0])
    spline = PchipInterpolator(thetas, values)
    return float(brentq(lambda th: float(spline(th)) - target, thetas[k], thetas[k + 1],
                        xtol=1e-14, rtol=4 * np.finfo(float).eps))


def _second_differences(th, lam, se):
    h1 = th[1:-1] - th[:-2]
    h2 = th[2:] - th[1:-1]
    c0 = 2.0 / (h1 * (h1 + h2))
    c1 = -2.0 / (h1 * h2)
    c2 = 2.0 / (h2 * (h1 + h2))
    d2 = c0 * lam[:-2] + c1 * lam[1:-1] + c2 * lam[2:]
    d2_se = np.sqrt((c0 * se[:-2]) ** 2 + (c1 * se[1:-1]) ** 2 + (c2 * se[2:]) ** 2)
    return d2, d2_se


def curve_from_fits(fits):
    entries = sorted(fits, key=lambda f: f.theta)
    curve = ExponentCurve(entries)
    if not entries:
        curve.warnings.append("no exponent fits available")
        return curve
    th, lam, se = curve.thetas, curve.lambdas, curve.ses
    require(bool(np.all(np.diff(th) > 0)), "thetas", "must be strictly increasing")

    for i in range(len(th)):
        for j in range(i + 1, len(th)):
            if not lam[i] > lam[j] - 2.0 * (se[i] + se[j]):
                curve.monotone_ok = False
                curve.violations.append(f"not decreasing between theta={th[i]:g} and theta={th[j]:g}")
    if len(th) >= 3:
        d2, d2_se = _second_differences(th, lam, se)
        for k in np.flatnonzero(d2 < -2.0 * d2_se):
            curve.convex_ok = False
            curve.violations.append(f"not convex around theta={th[k + 1]:g}")

    if len(th) < 2:
        curve.warnings.append("theta_c needs at least two fits")
        return curve
    curve.theta_c_hat = _crossing(th, lam)
    if curve.theta_c_hat is None:
        gap = float(np.min(np.abs(lam - LAMBDA_TARGET)))
        side = "above" if lam.min() > LAMBDA_TARGET else "below"
        curve.bracket_gap = gap
        curve.warnings.append(f"theta_c unavailable: lambda_hat stays {side} 1/2 (closest gap {gap:.4g})")
        return curve
    # lambda decreases, so the lower band crosses first
    curve.theta_c_interval = (_crossing(th, lam - 2.0 * se), _crossing(th, lam + 2.0 * se))
    return curve


def lambda_curve(thetas, budget=None, seed=(0, 0), threads=None, alpha=None, start=1.0):
    budget = budget or SurvivalBudget()
    thetas = [float(t) for t in thetas]
    require(all(t > 0 for t in thetas), "thetas", "each theta must be > 0")
    require(all(b > a for a, b in zip(thetas, thetas[1:])), "thetas", "must be strictly increasing")
    records = survival_table(thetas, budget.ratios, budget.density, budget.trials, seed, threads, alpha, start)
    fits, refused = [], []
    for th in thetas:
        try:
            fits.append(fit_lambda([r for r in records if r.theta == th]))
        except RefusalError as exc:
            logger.warning("%s", exc)
            refused.append(str(exc))
    curve = curve_from_fits(fits)
    curve.warnings.extend(refused)
    return curve, records


def _regime_slope(x, y):
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(coef[0])


def asymptotic_check(curve, small_max=0.4, large_min=1.5, min_points=3):
    """
    Large theta: slope of log lambda_hat against theta^2 (contract: negative).
    Small theta: slope of log lambda_hat against log theta (contract: within [-6, -2]).
    """
    th, lam = curve.thetas, curve.lambdas
    report = {"large": None, "small": None, "notes": []}

    large = (th >= large_min) & (lam > 0)
    if large.sum() >= min_points:
        slope = _regime_slope(th[large] ** 2, np.log(lam[large]))
        report["large"] = {"slope": slope, "points": int(large.sum()), "ok": slope < 0}
    else:
        report["notes"].append(f"large-theta regime needs {min_points} positive fits with theta >= {large_min:g}")

    small = (th <= small_max) & (lam > 0)
    if small.sum() >= min_points:
        slope = _regime_slope(np.log(th[small]), np.log(lam[small]))
        report["small"] = {"slope": slope, "points": int(small.sum()), "ok": -6.0 <= slope <= -2.0}
    else:
        report["notes"].append(f"small-theta regime needs {min_points} positive fits with theta <= {small_max:g}")
    return report


# === NONLINEAR CROSS-CHECK ===

def smallball_checkpoints(eps_list, f, points_per_octave=DEFAULT_DENSITY):
    """Geometric grid over all [eps f(eps), eps] with every window endpoint included exactly."""
    ends = []
    for eps in eps_list:
        require(0 < eps < 1, "eps", f"must lie in (0, 1), got {eps}")
        ratio = f(eps)
        require(0 < ratio < 1, "f", f"f({eps:g}) = {ratio:g} is outside (0, 1)")
        ends.extend([eps * ratio, eps])
    base = build_grid(min(ends), max(ends), points_per_octave).times
    times = np.sort(np.concatenate([base, ends]))
    keep = np.concatenate([[True], np.diff(times) > 1e-9 * times[1:]])
    grid = custom_grid(times[keep])
    grid.points_per_octave = int(points_per_octave)
    return grid


def _band_survivors(series, times, mask, level):
    window = np.abs(series[:, mask]) / times[mask][None, :] ** 0.25
    return int(np.count_nonzero(np.all(window <= level, axis=1)))


def smallball_u(theta, eps_list, f, runs, gaussian=None):
    """
    Survival of |u(t,0) - 1| <= |sigma(1)| theta t^(1/4) over t in [eps f(eps), eps],
    regressed on log f(eps); the same-noise H band is counted alongside.
    `runs` are CoupledRuns whose checkpoints come from smallball_checkpoints.
    """
    require(theta > 0, "theta", f"must be > 0, got {theta}")
    cfg = runs[0].config
    times = runs[0].times
    u = np.concatenate([r.series_u[:, :, 0] for r in runs])
    h = np.concatenate([r.series_h[:, :, 0] for r in runs])
    trials = u.shape[0]
    s1 = abs(cfg.sigma.sigma_at_one)
    slack = cfg.dt / 2

    rows, warnings = [], []
    for eps in sorted(eps_list):
        ratio = f(eps)
        lo = eps * ratio
        mask = (times >= lo - slack) & (times <= eps + slack)
        inside = times[mask]
        if inside.size == 0 or abs(inside[0] - lo) > slack + 1e-12 or abs(inside[-1] - eps) > slack + 1e-12:
            raise DomainError("checkpoints", f"window [{lo:.4g}, {eps:.4g}] is not covered by checkpoints")
        rows.append({
            "eps": eps,
            "f_eps": ratio,
            "trials": trials,
            "hits_u": _band_survivors(u, times, mask, s1 * theta),
            "hits_h": _band_survivors(h, times, mask, theta),
        })
    table = pd.DataFrame(rows)
    table["p_u"] = table["hits_u"] / trials
    table["p_h"] = table["hits_h"] / trials

    used = table[table["hits_u"] > 0]
    for eps in table.loc[table["hits_u"] == 0, "eps"]:
        msg = f"eps={eps:g}: no survivors, dropped from the fit"
        logger.warning(msg)
        warnings.append(msg)
    if len(used) < 3:
        raise RefusalError("trials", f"only {len(used)} eps values with survivors; need 3",
                           details={"table": table.to_dict(orient="list")})

    slope, intercept, se, r2 = weighted_loglog(np.log(used["f_eps"]), used["p_u"], used["trials"])
    report = {
        "theta": float(theta),
        "sigma": cfg.sigma.describe(),
        "table": table,
        "slope": slope,
        "se": se,
        "r_squared": r2,
        "warnings": warnings,
    }
    used_h = table[table["hits_h"] > 0]
    if len(used_h) >= 3:
        slope_h, _, se_h, _ = weighted_loglog(np.log(used_h["f_eps"]), used_h["p_h"], used_h["trials"])
        report["slope_h"], report["se_h"] = slope_h, se_h
    if gaussian is not None:
        combined = math.sqrt(se ** 2 + gaussian.se ** 2)
        report["lambda_hat"] = gaussian.lambda_hat
        report["lambda_se"] = gaussian.se
        report["z"] = abs(slope - gaussian.lambda_hat) / combined if combined > 0 else math.inf
        report["within_3se"] = bool(report["z"] <= 3.0)
    return report
