import math

import numpy as np
import pytest

from sim_utils import DomainError, RefusalError
from slowpoints.exponent import (
    ExponentCurve,
    ExponentFit,
    F_CATALOG,
    SurvivalBudget,
    SurvivalRecord,
    asymptotic_check,
    curve_from_fits,
    density_sweep,
    estimate_survival,
    fit_lambda,
    lambda_curve,
    records_frame,
    smallball_checkpoints,
    smallball_u,
    survival_table,
    wilson_interval,
)
from slowpoints.kernels import var_h
from slowpoints.spde import SpdeConfig, bounded_sin, constant, run_ensemble

SINGLE_POINT_TARGET = 0.6826894921370859
RATIOS = (2.0 ** 6, 2.0 ** 8, 2.0 ** 10, 2.0 ** 12)


def synthetic_records(lam, c=0.3, theta=1.0, trials=10 ** 15, ratios=RATIOS):
    return [SurvivalRecord(theta, r, 32, trials, int(round(trials * c * r ** -lam))) for r in ratios]


def fits_for(thetas, lambdas, se=0.01):
    return [ExponentFit(float(t), float(l), se, 1.0, list(RATIOS)) for t, l in zip(thetas, lambdas)]


# --- Records and intervals ---

class TestRecords:

    def test_wilson_contains_estimate(self):
        lo, hi = wilson_interval(30, 100)
        assert lo < 0.3 < hi
        assert wilson_interval(0, 100)[0] == pytest.approx(0.0, abs=1e-12)
        assert wilson_interval(100, 100)[1] == pytest.approx(1.0, abs=1e-12)
        assert wilson_interval(0, 0) == (0.0, 1.0)

    def test_wilson_narrows_with_trials(self):
        small = wilson_interval(30, 100)
        large = wilson_interval(3000, 10000)
        assert large[1] - large[0] < small[1] - small[0]

    def test_zero_hits_flagged(self):
        rec = SurvivalRecord(1.0, 64.0, 32, 100, 0)
        assert rec.p_hat == 0.0
        assert "lower bound" in rec.warnings[0]

    def test_rejects_impossible_counts(self):
        with pytest.raises(DomainError):
            SurvivalRecord(1.0, 64.0, 32, 100, 101)
        with pytest.raises(DomainError):
            SurvivalRecord(1.0, 64.0, 32, 0, 0)

    def test_frame_columns(self):
        df = records_frame(synthetic_records(0.5, trials=1000))
        assert list(df.columns) == ["theta", "ratio", "grid_density", "trials", "hits", "p_hat",
                                    "ci_low", "ci_high", "alpha"]
        assert len(df) == 4


# --- Fits ---

class TestFit:

    def test_recovers_exact_power_law(self):
        fit = fit_lambda(synthetic_records(0.7))
        assert fit.lambda_hat == pytest.approx(0.7, abs=1e-9)
        assert fit.intercept == pytest.approx(math.log(0.3), abs=1e-9)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-9)
        assert fit.ratios_used == list(RATIOS)

    def test_order_does_not_matter(self):
        recs = synthetic_records(0.4)
        a = fit_lambda(recs)
        b = fit_lambda(recs[::-1])
        assert a.lambda_hat == pytest.approx(b.lambda_hat, rel=1e-12)

    def test_refuses_sparse_counts(self):
        recs = synthetic_records(0.5, trials=1000)
        recs[-1] = SurvivalRecord(1.0, RATIOS[-1], 32, 1000, 10)
        with pytest.raises(RefusalError) as err:
            fit_lambda(recs)
        assert RATIOS[-1] in err.value.details["under_hit"]
        assert err.value.details["under_hit"][RATIOS[-1]] == 3000

    def test_needs_three_ratios(self):
        with pytest.raises(DomainError) as err:
            fit_lambda(synthetic_records(0.5)[:2])
        assert not isinstance(err.value, RefusalError)

    def test_rejects_mixed_thetas(self):
        recs = synthetic_records(0.5)[:2] + synthetic_records(0.5, theta=2.0)[2:]
        with pytest.raises(DomainError):
            fit_lambda(recs)

    def test_flags_non_positive_slope(self):
        fit = fit_lambda(synthetic_records(-0.1, c=1e-3))
        assert fit.lambda_hat < 0
        assert fit.warnings


# --- Curves ---

class TestCurve:

    def test_theta_c_at_node(self):
        th = np.array([1.0, 1.5, 2.0, 2.5, 3.0])
        curve = curve_from_fits(fits_for(th, 1.0 / th))
        assert curve.theta_c_hat == pytest.approx(2.0, abs=1e-12)
        assert curve.monotone_ok and curve.convex_ok
        assert not curve.violations

    def test_theta_c_between_nodes(self):
        th = np.linspace(1.0025, 3.0025, 201)
        curve = curve_from_fits(fits_for(th, 1.0 / th))
        assert curve.theta_c_hat == pytest.approx(2.0, abs=1e-5)

    def test_interval_brackets_estimate(self):
        th = np.array([1.0, 1.5, 2.0, 2.5, 3.0])
        curve = curve_from_fits(fits_for(th, 1.0 / th, se=0.02))
        lo, hi = curve.theta_c_interval
        assert lo < curve.theta_c_hat < hi
        assert lo == pytest.approx(1.0 / 0.54, rel=1e-2)
        assert hi == pytest.approx(1.0 / 0.46, rel=1e-2)

    def test_sorted_by_theta(self):
        th = np.array([3.0, 1.0, 2.0])
        curve = curve_from_fits(fits_for(th, 1.0 / th))
        assert curve.thetas.tolist() == [1.0, 2.0, 3.0]

    def test_monotonicity_violation(self):
        curve = curve_from_fits(fits_for([1.0, 2.0, 3.0], [1.0, 0.6, 0.8]))
        assert not curve.monotone_ok
        assert any("not decreasing" in v for v in curve.violations)

    def test_convexity_violation(self):
        curve = curve_from_fits(fits_for([1.0, 2.0, 3.0, 4.0], [1.0, 0.9, 0.5, 0.45]))
        assert curve.monotone_ok
        assert not curve.convex_ok

    def test_no_crossing(self):
        curve = curve_from_fits(fits_for([1.0, 2.0, 3.0], [2.0, 1.5, 1.0]))
        assert curve.theta_c_hat is None
        assert curve.bracket_gap == pytest.approx(0.5)
        assert "above" in curve.warnings[0]

    def test_empty_and_single(self):
        assert curve_from_fits([]).warnings
        single = curve_from_fits(fits_for([1.0], [0.4]))
        assert single.theta_c_hat is None

    def test_dict_round(self):
        curve = curve_from_fits(fits_for([1.0, 2.0, 3.0], [1.0, 0.5, 0.2]))
        out = curve.as_dict()
        assert out["theta_c_hat"] == pytest.approx(2.0)
        rebuilt = curve_from_fits([ExponentFit(**e) for e in out["entries"]])
        assert rebuilt.theta_c_hat == curve.theta_c_hat


class TestAsymptotics:

    def test_large_theta_gaussian_tail(self):
        th = np.array([1.5, 2.0, 2.5, 3.0])
        report = asymptotic_check(ExponentCurve(fits_for(th, np.exp(-th ** 2))))
        assert report["large"]["slope"] == pytest.approx(-1.0, abs=1e-9)
        assert report["large"]["ok"]
        assert report["small"] is None
        assert any("small-theta" in n for n in report["notes"])

    def test_small_theta_power(self):
        th = np.array([0.1, 0.2, 0.3, 0.4])
        report = asymptotic_check(ExponentCurve(fits_for(th, th ** -4.0)))
        assert report["small"]["slope"] == pytest.approx(-4.0, abs=1e-9)
        assert report["small"]["ok"]
        assert report["large"] is None


# --- Monte Carlo survival ---

class TestSurvival:

    def test_single_point_probability(self):
        theta = math.sqrt(var_h(1.0))
        rec = estimate_survival(theta, 1.0, 1, 20_000, (1, 0))
        se = math.sqrt(SINGLE_POINT_TARGET * (1 - SINGLE_POINT_TARGET) / rec.trials)
        assert abs(rec.p_hat - SINGLE_POINT_TARGET) <= 4 * se

    def test_deterministic(self):
        a = estimate_survival(1.0, 16.0, 4, 2000, (2, 3))
        b = estimate_survival(1.0, 16.0, 4, 2000, (2, 3))
        assert a.hits == b.hits

    def test_wide_band_always_survives(self):
        assert estimate_survival(1e6, 16.0, 4, 100, (0, 0)).hits == 100

    def test_start_needs_localized_field(self):
        with pytest.raises(DomainError):
            estimate_survival(1.0, 4.0, 4, 100, (0, 0), start=0.01)

    def test_table_monotone(self):
        recs = survival_table([0.8, 1.2], [4.0, 16.0, 64.0], 8, 5000, (4, 0))
        hits = np.array([r.hits for r in recs]).reshape(2, 3)
        assert np.all(np.diff(hits, axis=1) <= 0)
        assert np.all(hits[1] >= hits[0])

    def test_density_sweep_monotone(self):
        recs = density_sweep(1.0, 16.0, [16, 4, 8], 5000, (5, 0))
        assert [r.grid_density for r in recs] == [4, 8, 16]
        hits = [r.hits for r in recs]
        assert hits[0] >= hits[1] >= hits[2]

    def test_density_sweep_needs_nested_grids(self):
        with pytest.raises(DomainError):
            density_sweep(1.0, 16.0, [3, 4], 100, (0, 0))

    def test_lambda_curve_decreasing(self):
        budget = SurvivalBudget((2.0, 4.0, 8.0, 16.0), 4, 20_000)
        curve, records = lambda_curve([1.0, 2.0], budget, (6, 0))
        assert len(records) == 8
        assert len(curve.entries) == 2
        assert curve.lambdas[0] > curve.lambdas[1]


# --- Nonlinear cross-check ---

@pytest.fixture(scope="module")
def linear_runs():
    grid = smallball_checkpoints([0.04, 0.02, 0.01], F_CATALOG["sqrt"], 2)
    dx = 0.02
    cfg = SpdeConfig(half_width=1.1, dx=dx, dt=dx ** 2 / 4.0, horizon=0.04, sigma=constant(1.0),
                     checkpoints=grid, seed=(8, 0), analysis_width=dx)
    return run_ensemble(cfg, 200, batch_size=100)


class TestSmallBall:

    def test_checkpoints_hold_window_ends(self):
        grid = smallball_checkpoints([0.04, 0.01], F_CATALOG["sqrt"], 4)
        for end in (0.04, 0.008, 0.01, 0.001):
            assert np.any(np.isclose(grid.times, end, rtol=1e-12))
        assert grid.times[0] == pytest.approx(0.001)
        assert grid.times[-1] == pytest.approx(0.04)
        assert grid.points_per_octave == 4

    def test_checkpoints_reject_bad_eps(self):
        with pytest.raises(DomainError):
            smallball_checkpoints([1.5], F_CATALOG["sqrt"], 4)

    def test_linear_noise_matches_gaussian_band(self, linear_runs):
        out = smallball_u(1.0, [0.04, 0.02, 0.01], F_CATALOG["sqrt"], linear_runs)
        table = out["table"]
        assert table["hits_u"].tolist() == table["hits_h"].tolist()
        assert table["trials"].iloc[0] == 200
        assert out["slope"] == pytest.approx(out["slope_h"])

    def test_comparison_with_gaussian_fit(self, linear_runs):
        base = smallball_u(1.0, [0.04, 0.02, 0.01], F_CATALOG["sqrt"], linear_runs)
        fit = ExponentFit(1.0, base["slope"], 0.1, 1.0, [2.0, 4.0, 8.0])
        out = smallball_u(1.0, [0.04, 0.02, 0.01], F_CATALOG["sqrt"], linear_runs, fit)
        assert out["z"] == pytest.approx(0.0, abs=1e-12)
        assert out["within_3se"]

    def test_refuses_without_survivors(self, linear_runs):
        with pytest.raises(RefusalError):
            smallball_u(1e-3, [0.04, 0.02, 0.01], F_CATALOG["sqrt"], linear_runs)


# --- Slow acceptance ---

@pytest.mark.slow
def test_single_point_full_budget():
    theta = math.sqrt(var_h(1.0))
    rec = estimate_survival(theta, 1.0, 32, 100_000, (20240611, 0), threads=4)
    se = math.sqrt(SINGLE_POINT_TARGET * (1 - SINGLE_POINT_TARGET) / rec.trials)
    assert abs(rec.p_hat - SINGLE_POINT_TARGET) <= 4 * se


@pytest.mark.slow
def test_default_curve_shape():
    thetas = [0.4, 0.6, 0.8, 1.0, 1.4, 2.0]
    curve, records = lambda_curve(thetas, SurvivalBudget(), (20240611, 0), threads=4)
    assert len(records) == len(thetas) * len(RATIOS)
    assert len(curve.entries) >= 3
    assert curve.monotone_ok
    assert curve.convex_ok
    # only theta = 2 lies beyond 1.5 in this set, so the sign check starts at 1
    large = asymptotic_check(curve, large_min=1.0)["large"]
    assert large is not None and large["points"] == 3
    assert large["ok"] and large["slope"] < 0


@pytest.mark.slow
def test_smallball_cross_validation():
    eps = [2.0 ** -2, 2.0 ** -4, 2.0 ** -6, 2.0 ** -8]
    f = F_CATALOG["sqrt"]
    dx = 0.01
    cfg = SpdeConfig(half_width=2.22, dx=dx, dt=dx ** 2 / 4.0, horizon=0.25, sigma=bounded_sin(),
                     checkpoints=smallball_checkpoints(eps, f, 4), seed=(20240611, 1), analysis_width=dx)
    runs = run_ensemble(cfg, 2000, batch_size=100, threads=4)
    gaussian = fit_lambda(survival_table([1.0], [2.0, 4.0, 8.0, 16.0], 4, 100_000, (20240611, 2), threads=4))
    out = smallball_u(1.0, eps, f, runs, gaussian)
    assert out["table"]["trials"].iloc[0] == 2000
    assert out["lambda_hat"] == gaussian.lambda_hat
    assert out["within_3se"], f"slope {out['slope']:.3f} vs lambda {gaussian.lambda_hat:.3f}, z={out['z']:.2f}"
