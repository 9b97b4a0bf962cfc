# slowpoints/kernels.py
"""
Heat kernel, covariance of the linear field H, and second moments of the
localized field H_alpha. Everything here is a pure function of its arguments.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from sim_utils import DomainError, require

SQRT_PI = math.sqrt(math.pi)
SQRT_2 = math.sqrt(2.0)
SQRT_2PI = math.sqrt(2.0 * math.pi)

# Past this argument the scaled complement 1 - sqrt(pi) z erfcx(z) is taken
# from its asymptotic series; below it the direct form loses < 4 digits.
ERFCX_SERIES_FROM = 30.0

QUAD_OPTS = {"epsabs": 1e-12, "epsrel": 1e-12, "limit": 200}


# === QUERIES ===

@dataclass(frozen=True)
class KernelQuery:
    t: float
    x: float
    s: float
    y: float

    def __post_init__(self):
        require(self.t > 0, "t", f"must be > 0, got {self.t}")
        require(self.s > 0, "s", f"must be > 0, got {self.s}")
        require(math.isfinite(self.x), "x", "must be finite")
        require(math.isfinite(self.y), "y", "must be finite")


@dataclass(frozen=True)
class LocalizationQuery:
    t: float
    alpha: float

    def __post_init__(self):
        require(self.t > 0, "t", f"must be > 0, got {self.t}")
        require(0.0 < self.alpha < 1.0, "alpha", f"must lie in (0, 1), got {self.alpha}")

    @property
    def half_width(self):
        return self.t ** ((1.0 - self.alpha) / 2.0)


# === HEAT KERNEL AND VARIANCE ===

def heat_kernel(s, y):
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(s <= 0):
        raise DomainError("s", "heat kernel needs s > 0")
    out = np.exp(-(y * y) / (4.0 * s)) / np.sqrt(4.0 * math.pi * s)
    return float(out) if out.ndim == 0 else out


def var_h(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t", "variance needs t >= 0")
    out = np.sqrt(t / (2.0 * math.pi))
    return float(out) if out.ndim == 0 else out


# === COVARIANCE OF H ===

def _erfcx_gap(z):
    """1 - sqrt(pi) * z * erfcx(z), accurate for large z."""
    if z < ERFCX_SERIES_FROM:
        return 1.0 - SQRT_PI * z * float(special.erfcx(z))
    u = 1.0 / (2.0 * z * z)
    # alternating series in u = 1/(2z^2): u - 3u^2 + 15u^3 - 105u^4 + 945u^5
    return u * (1.0 - u * (3.0 - u * (15.0 - u * (105.0 - 945.0 * u))))


def _scaled_primitive(v, a):
    # v*exp(-a^2/v^2) - a*sqrt(pi)*erfc(a/v), written as exp(-z^2) * v * gap(z)
    if v == 0.0:
        return 0.0
    if a == 0.0:
        return v
    z = a / v
    return v * math.exp(-z * z) * _erfcx_gap(z)


def cov_h(q):
    """
    Cov[H(t,x), H(s,y)] in closed form.

    With w = t + s - 2r and v = sqrt(w) the defining integral becomes
    (2 sqrt(pi))^-1 * int_{sqrt|t-s|}^{sqrt(t+s)} exp(-a^2/v^2) dv, a = |x-y|/2,
    whose primitive is v exp(-a^2/v^2) - a sqrt(pi) erfc(a/v).
    """
    a = abs(q.x - q.y) / 2.0
    hi = math.sqrt(q.t + q.s)
    lo = math.sqrt(abs(q.t - q.s))
    value = (_scaled_primitive(hi, a) - _scaled_primitive(lo, a)) / (2.0 * SQRT_PI)
    return max(value, 0.0)


def cov_h_temporal(t, s):
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t <= 0):
        raise DomainError("t", "temporal covariance needs t > 0")
    if np.any(s <= 0):
        raise DomainError("s", "temporal covariance needs s > 0")
    out = (np.sqrt(t + s) - np.sqrt(np.abs(t - s))) / (2.0 * SQRT_PI)
    return float(out) if out.ndim == 0 else out


def cov_h_quad(q):
    """Adaptive quadrature of the raw covariance integral over r in (0, s^t)."""
    d2 = (q.x - q.y) ** 2

    def integrand(r):
        w = q.t + q.s - 2.0 * r
        if w <= 0.0:
            return 0.0
        return math.exp(-d2 / (4.0 * w)) / math.sqrt(4.0 * math.pi * w)

    value, _ = integrate.quad(integrand, 0.0, min(q.t, q.s), epsabs=1e-15, epsrel=1e-12, limit=200)
    return value


def temporal_increment_variance(t, eps):
    """E|H(t+eps,x) - H(t,x)|^2; rises from var_h(eps) at t=0 toward sqrt(eps/pi)."""
    require(t >= 0, "t", f"must be >= 0, got {t}")
    require(eps > 0, "eps", f"must be > 0, got {eps}")
    if t == 0:
        return var_h(eps)
    return var_h(t + eps) + var_h(t) - 2.0 * cov_h_temporal(t + eps, t)


def spatial_increment_variance(t, d):
    """E|H(t,x) - H(t,x+d)|^2; bounded by |d|/2, approached as t grows."""
    require(t > 0, "t", f"must be > 0, got {t}")
    return max(2.0 * (var_h(t) - cov_h(KernelQuery(t, 0.0, t, d))), 0.0)


# === LOCALIZED FIELD ===

def var_h_alpha(q):
    # v = rho^2 turns the 1/sqrt(v) endpoint into a bounded integrand
    w = q.half_width

    def integrand(rho):
        return float(special.erf(w / (SQRT_2 * rho))) if rho > 0 else 1.0

    value, _ = integrate.quad(integrand, 0.0, math.sqrt(q.t), **QUAD_OPTS)
    return value / SQRT_2PI


def localization_l2(q):
    """
    E|H(t,x) - H_alpha(t,x)|^2 = var_h(t) - var_h_alpha(q).

    Evaluated as the complementary-window integral so that values far below
    var_h(t) keep their relative precision instead of cancelling to zero.
    """
    w = q.half_width

    def integrand(rho):
        return float(special.erfc(w / (SQRT_2 * rho))) if rho > 0 else 0.0

    value, _ = integrate.quad(integrand, 0.0, math.sqrt(q.t), epsabs=0.0, epsrel=1e-10, limit=200)
    return max(value / SQRT_2PI, 0.0)


def localization_bound(q):
    return 2.0 * math.sqrt(q.t / math.pi) * math.exp(-1.0 / (4.0 * q.t ** q.alpha))


def cov_h_alpha_temporal(t, s, alpha):
    """Cov[H_alpha(t,0), H_alpha(s,0)]; windows shrink with time, so the smaller one binds."""
    require(t > 0, "t", f"must be > 0, got {t}")
    require(s > 0, "s", f"must be > 0, got {s}")
    require(0.0 < alpha < 1.0, "alpha", f"must lie in (0, 1), got {alpha}")
    m = min(t, s)
    gap = abs(t - s)
    w = m ** ((1.0 - alpha) / 2.0)

    # r = m - rho^2; p + q = gap + 2 rho^2, pq/(p+q) gives the product-kernel variance
    def integrand(rho):
        p = rho * rho
        q = gap + p
        total = p + q
        if total <= 0.0:
            return 1.0 / SQRT_2PI
        tau2 = 2.0 * p * q / total
        mass = float(special.erf(w / math.sqrt(2.0 * tau2))) if tau2 > 0 else 1.0
        return 2.0 * rho * mass / math.sqrt(4.0 * math.pi * total)

    value, _ = integrate.quad(integrand, 0.0, math.sqrt(m), **QUAD_OPTS)
    return value
