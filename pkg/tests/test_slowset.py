import itertools

import numpy as np
import pytest

from sim_utils import DomainError, RefusalError
from slowpoints.exponent import ExponentFit
from slowpoints.gaussfield import build_grid
from slowpoints.slowset import (
    PointSet,
    SlowSetCensus,
    admissible_levels,
    box_census,
    census_pipeline,
    detect_slow,
    dim_fit,
    dimension_vs_theory,
    hitting_frequency,
    multifractal_shells,
    window_sweep,
)
from slowpoints.spde import FieldStatistic, SpdeConfig, bounded_sin, run_coupled

GRID = np.arange(257) / 256.0


def cantor_points(depth=8):
    return np.array([sum(d * 3.0 ** -(k + 1) for k, d in enumerate(digits))
                     for digits in itertools.product((0, 2), repeat=depth)])


def make_stat(values, sigma_at_one=1.0):
    values = np.atleast_2d(values)
    return FieldStatistic(
        sites=GRID.copy(), values=values, window=(0.1, 1.0), times_used=np.array([0.1, 1.0]),
        sigma_at_one=sigma_at_one, analysis_width=1.0, resolution=1.0 / 256,
    )


@pytest.fixture
def random_stat():
    return make_stat(np.abs(np.random.default_rng(12).standard_normal((3, GRID.size))))


# --- Point sets and census ---

class TestCensus:

    def test_point_set_validation(self):
        with pytest.raises(DomainError):
            PointSet([0.2, 1.5], 0.01)
        with pytest.raises(DomainError):
            PointSet([0.2], 0.0)

    def test_point_set_basics(self):
        pts = PointSet([0.75, 0.25], 2.0 ** -8)
        assert pts.points.tolist() == [0.25, 0.75]
        assert pts.max_level == 8
        assert 0.25 in pts and 0.5 not in pts

    def test_single_point(self):
        census = box_census(PointSet([0.5], 2.0 ** -8), 8)
        assert set(census.counts.values()) == {1}

    def test_full_interval(self):
        census = box_census(PointSet(GRID, 2.0 ** -8), 8)
        assert [census.counts[n] for n in range(9)] == [2 ** n for n in range(9)]

    def test_right_endpoint_joins_last_box(self):
        census = box_census(PointSet([1.0], 2.0 ** -4), 4)
        assert all(c == 1 for c in census.counts.values())

    def test_counts_nested(self):
        census = box_census(PointSet(cantor_points(), 2.0 ** -12), 12)
        counts = [census.counts[n] for n in range(13)]
        assert all(a <= b <= 2 * a for a, b in zip(counts, counts[1:]))

    def test_depth_limited_by_resolution(self):
        with pytest.raises(DomainError):
            box_census(PointSet([0.5], 2.0 ** -6), 7)


# --- Dimension fits ---

class TestDimension:

    def test_full_interval_explicit_range(self):
        est = dim_fit(box_census(PointSet(GRID, 2.0 ** -8), 8), (0, 8))
        assert est.slope == pytest.approx(1.0, abs=1e-12)
        assert est.level_range == (0, 8)
        assert est.r_squared == pytest.approx(1.0)

    def test_full_interval_is_saturated(self):
        with pytest.raises(RefusalError) as err:
            dim_fit(box_census(PointSet(GRID, 2.0 ** -8), 8))
        assert err.value.details["census"]

    def test_single_point_dimension_zero(self):
        est = dim_fit(box_census(PointSet([0.3], 2.0 ** -8), 8), (0, 8))
        assert est.slope == 0.0

    def test_cantor_set(self):
        census = box_census(PointSet(cantor_points(), 2.0 ** -12), 12)
        assert admissible_levels(census) == [5, 6, 7, 8, 9]
        est = dim_fit(census)
        assert est.slope == pytest.approx(np.log(2) / np.log(3), abs=0.03)
        assert est.level_range == (5, 9)

    def test_slope_clamped(self):
        census = SlowSetCensus({n: 3 ** n for n in range(5)}, 10 ** 6, 2.0 ** -10)
        est = dim_fit(census, (0, 4))
        assert est.slope == 1.0
        assert est.slope_raw == pytest.approx(np.log2(3.0))

    def test_bad_range(self):
        census = box_census(PointSet([0.3], 2.0 ** -4), 4)
        with pytest.raises(DomainError):
            dim_fit(census, (2, 9))

    def test_versus_theory(self):
        est = dim_fit(box_census(PointSet(GRID, 2.0 ** -8), 8), (0, 8))
        out = dimension_vs_theory(est, ExponentFit(2.0, 0.0, 0.0, 1.0, [64.0]), theta_c=1.5)
        assert out["theory"] == 1.0
        assert out["gap"] == pytest.approx(0.0, abs=1e-12)
        assert out["above_theta_c"] is True
        assert out["exploratory"]

    def test_versus_theory_empty_prediction(self):
        est = dim_fit(box_census(PointSet([0.3], 2.0 ** -8), 8), (0, 8))
        out = dimension_vs_theory(est, ExponentFit(0.5, 0.6, 0.05, 1.0, [64.0]), theta_c=1.0)
        assert out["theory"] == pytest.approx(-0.2)
        assert out["gap_se"] == pytest.approx(0.1)
        assert out["above_theta_c"] is False
        assert "empty" in out["note"]


# --- Detection and reports ---

class TestDetection:

    def test_empty_and_full(self, random_stat):
        assert len(detect_slow(random_stat, 1e-9)) == 0
        assert len(detect_slow(random_stat, 1e9)) == GRID.size

    def test_monotone_in_theta(self, random_stat):
        sizes = [len(detect_slow(random_stat, th)) for th in (0.2, 0.5, 1.0, 2.0)]
        assert sizes == sorted(sizes)

    def test_threshold_scales_with_sigma(self):
        stat = make_stat(np.full(GRID.size, 1.5), sigma_at_one=2.0)
        assert len(detect_slow(stat, 1.0)) == GRID.size
        assert len(detect_slow(stat, 1.0, sigma_at_one=1.0)) == 0

    def test_shells(self):
        values = np.where(GRID < 0.5, 1.5, 3.0)
        shells = multifractal_shells(make_stat(values), theta_c=1.0, n_shells=3)
        assert [s["points"] for s in shells] == [128, 129, 0]
        assert shells[0]["theta_low"] == 1.0 and shells[0]["theta_high"] == 2.0

    def test_hitting_frequency(self):
        values = np.full((4, GRID.size), 5.0)
        values[0, 128] = 0.1
        values[1, 10] = 0.1
        out = hitting_frequency(make_stat(values), 1.0, (0.25, 0.75))
        assert out["hits"] == 1
        assert out["frequency"] == 0.25
        assert out["ci"][0] < 0.25 < out["ci"][1]

    def test_pipeline_returns_census(self, random_stat):
        pts, census, est = census_pipeline(random_stat, 1.0)
        assert census.n_points == len(pts)
        assert max(census.counts) == pts.max_level
        if est is not None:
            assert 0.0 <= est.slope <= 1.0


def test_window_sweep_shrinks_set():
    dx = 0.05
    cfg = SpdeConfig(half_width=2.0, dx=dx, dt=dx ** 2 / 4.0, horizon=0.05, sigma=bounded_sin(),
                     checkpoints=build_grid(0.0125, 0.05, 2), seed=(13, 0), analysis_width=0.5)
    rows = window_sweep(run_coupled(cfg, 4), 1.0, 0.05, [0.0125, 0.05, 0.025])
    assert [r["t_min"] for r in rows] == [0.05, 0.025, 0.0125]
    assert [r["checkpoints"] for r in rows] == [1, 3, 5]
    sizes = [r["mean_size"] for r in rows]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))
