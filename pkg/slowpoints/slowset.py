# slowpoints/slowset.py
"""
Slow points at finite resolution: threshold the windowed field statistic, count
occupied dyadic boxes level by level, and fit log2(count) against level.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sim_utils import RefusalError, require
from slowpoints.exponent import wilson_interval
from slowpoints.spde import field_statistic

logger = logging.getLogger(__name__)

MIN_BOX_COUNT = 10


# === TYPES ===

@dataclass(eq=False)
class PointSet:
    points: np.ndarray
    resolution: float

    def __post_init__(self):
        self.points = np.sort(np.asarray(self.points, dtype=float).ravel())
        require(self.resolution > 0, "resolution", f"must be > 0, got {self.resolution}")
        if self.points.size:
            require(self.points[0] >= 0.0 and self.points[-1] <= 1.0, "points", "must lie in [0, 1]")

    def __len__(self):
        return int(self.points.size)

    def __contains__(self, x):
        return bool(np.any(np.isclose(self.points, x, rtol=0.0, atol=self.resolution / 4)))

    @property
    def max_level(self):
        return int(math.floor(math.log2(1.0 / self.resolution) + 1e-9))


@dataclass(eq=False)
class SlowSetCensus:
    counts: dict
    n_points: int
    resolution: float

    def available(self, n):
        return min(2 ** n, self.n_points)

    def as_rows(self):
        return [{"level": n, "count": c, "available": self.available(n)} for n, c in sorted(self.counts.items())]


@dataclass
class DimensionEstimate:
    slope: float
    slope_raw: float
    level_range: tuple
    r_squared: float
    se: float = 0.0
    levels_used: list = field(default_factory=list)

    def as_dict(self):
        return {
            "slope": self.slope,
            "slope_raw": self.slope_raw,
            "level_range": list(self.level_range),
            "r_squared": self.r_squared,
            "se": self.se,
            "levels_used": list(self.levels_used),
        }


# === DETECTION ===

def _slow_mask(values, theta, sigma_at_one):
    require(theta > 0, "theta", f"must be > 0, got {theta}")
    return values <= abs(sigma_at_one) * theta


def detect_slow(stat, theta, sigma_at_one=None, replica=0):
    """Sites of one replica whose windowed statistic stays within |sigma(1)| theta, rescaled to [0, 1]."""
    s1 = stat.sigma_at_one if sigma_at_one is None else sigma_at_one
    mask = _slow_mask(stat.values[replica], theta, s1)
    return PointSet(stat.sites[mask] / stat.analysis_width, stat.resolution)


# === CENSUS ===

def _boxes(points, n):
    size = 2 ** n
    return np.minimum(np.floor(points * size), size - 1).astype(np.int64)


def box_census(point_set, n_max):
    """Number of occupied boxes [j 2^-n, (j+1) 2^-n) at every level 0..n_max; 1.0 joins the last box."""
    require(int(n_max) >= 0, "n_max", "must be >= 0")
    require(int(n_max) <= point_set.max_level, "n_max",
            f"level {n_max} is finer than the resolution allows (max {point_set.max_level})")
    counts = {n: int(np.unique(_boxes(point_set.points, n)).size) for n in range(int(n_max) + 1)}
    return SlowSetCensus(counts, len(point_set), point_set.resolution)


def admissible_levels(census, min_count=MIN_BOX_COUNT):
    """Levels past the sparse start and short of saturation."""
    return [n for n, c in sorted(census.counts.items()) if min_count <= c <= census.available(n) / 2]


def dim_fit(census, level_range=None):
    """
    Least-squares slope of log2 counts against level. Without an explicit
    `level_range` only admissible levels are used; a given range is taken as is.
    """
    if level_range is None:
        levels = admissible_levels(census)
    else:
        lo, hi = int(level_range[0]), int(level_range[1])
        require(lo <= hi and lo in census.counts and hi in census.counts, "level_range",
                f"{level_range} is outside the census levels")
        levels = [n for n in range(lo, hi + 1) if census.counts[n] > 0]
    if len(levels) < 3:
        raise RefusalError("level_range", f"only {len(levels)} admissible levels, need 3",
                           details={"census": census.as_rows()})

    x = np.array(levels, dtype=float)
    y = np.log2([census.counts[n] for n in levels])
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    sxx = float(((x - x.mean()) ** 2).sum())
    se = math.sqrt(ss_res / (len(x) - 2) / sxx) if len(x) > 2 else 0.0
    raw = float(coef[0])
    return DimensionEstimate(
        slope=min(max(raw, 0.0), 1.0),
        slope_raw=raw,
        level_range=(levels[0], levels[-1]),
        r_squared=1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0,
        se=se,
        levels_used=levels,
    )


# === REPORTS ===

def dimension_vs_theory(est, lam, theta=None, theta_c=None):
    """Box dimension next to 1 - 2 lambda_hat(theta); exploratory, since the identity is a small-time limit."""
    lam_se = lam.se
    theory = 1.0 - 2.0 * lam.lambda_hat
    gap = est.slope - theory
    gap_se = math.sqrt(est.se ** 2 + (2.0 * lam_se) ** 2)
    theta = lam.theta if theta is None else theta
    report = {
        "theta": theta,
        "dimension": est.slope,
        "dimension_se": est.se,
        "theory": theory,
        "theory_se": 2.0 * lam_se,
        "gap": gap,
        "gap_se": gap_se,
        "theta_c": theta_c,
        "above_theta_c": None if theta_c is None else bool(theta >= theta_c),
        "exploratory": True,
    }
    if theory < 0:
        report["note"] = "theory predicts an empty slow set at this theta"
    elif gap_se > 0:
        report["note"] = f"gap is {abs(gap) / gap_se:.2f} combined se"
    return report


def multifractal_shells(stat, theta_c, sigma_at_one=None, n_shells=4, n_max=None, replica=0):
    """
    Points in successive shells theta_c 2^(k-1) < statistic/|sigma(1)| <= theta_c 2^k,
    k = 1..n_shells, each with a box-count dimension when the census allows one.
    """
    require(theta_c > 0, "theta_c", f"must be > 0, got {theta_c}")
    s1 = abs(stat.sigma_at_one if sigma_at_one is None else sigma_at_one)
    values = stat.values[replica] / s1
    positions = stat.sites / stat.analysis_width
    shells = []
    for k in range(1, int(n_shells) + 1):
        lo, hi = theta_c * 2.0 ** (k - 1), theta_c * 2.0 ** k
        pts = PointSet(positions[(values > lo) & (values <= hi)], stat.resolution)
        depth = pts.max_level if n_max is None else int(n_max)
        row = {"shell": k, "theta_low": lo, "theta_high": hi, "points": len(pts), "dimension": None, "se": None}
        if len(pts):
            try:
                est = dim_fit(box_census(pts, depth))
                row["dimension"], row["se"] = est.slope, est.se
            except RefusalError as exc:
                logger.debug("shell %d: %s", k, exc)
        shells.append(row)
    return shells


def hitting_frequency(stat, theta, interval=(0.0, 1.0), sigma_at_one=None):
    """Fraction of replicas whose detected set meets `interval`, with a Wilson interval."""
    lo, hi = interval
    require(0.0 <= lo <= hi <= 1.0, "interval", f"must be a subinterval of [0, 1], got {interval}")
    s1 = stat.sigma_at_one if sigma_at_one is None else sigma_at_one
    positions = stat.sites / stat.analysis_width
    inside = (positions >= lo) & (positions <= hi)
    slow = _slow_mask(stat.values[:, inside], theta, s1)
    hits = int(np.count_nonzero(slow.any(axis=1)))
    n = int(stat.values.shape[0])
    return {"theta": theta, "interval": [lo, hi], "replicas": n, "hits": hits,
            "frequency": hits / n, "ci": list(wilson_interval(hits, n))}


def window_sweep(run, theta, t_max, t_mins, source="u"):
    """Detected-set size per replica as the window start t_min moves toward zero."""
    rows = []
    for t_min in sorted(t_mins, reverse=True):
        stat = field_statistic(run, (t_min, t_max), source)
        sizes = np.count_nonzero(_slow_mask(stat.values, theta, stat.sigma_at_one), axis=1)
        rows.append({
            "t_min": float(t_min),
            "checkpoints": int(stat.times_used.size),
            "mean_size": float(sizes.mean()),
            "max_size": int(sizes.max()),
            "fraction": float(sizes.mean() / stat.sites.size),
        })
    return rows


def census_pipeline(stat, theta, n_max=None, replica=0, level_range=None):
    """detect -> census -> fit for one replica; the fit is None when the census refuses."""
    pts = detect_slow(stat, theta, replica=replica)
    census = box_census(pts, pts.max_level if n_max is None else n_max)
    try:
        est = dim_fit(census, level_range)
    except RefusalError as exc:
        logger.warning("replica %d theta=%g: %s", replica, theta, exc)
        est = None
    return pts, census, est
