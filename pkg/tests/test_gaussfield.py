import numpy as np
import pytest

from sim_utils import DomainError, NumericalError
from slowpoints import gaussfield
from slowpoints.gaussfield import (
    REPRODUCTION_TOL,
    PathBatch,
    TimeGrid,
    build_grid,
    check_factor,
    covariance_calibration,
    covariance_matrix,
    custom_grid,
    factor_covariance,
    sample_paths,
    scaling_bound,
    scaling_check,
    survival_counts,
    survival_indicator,
)
from slowpoints.kernels import var_h


@pytest.fixture(scope="module")
def factor():
    return factor_covariance(build_grid(1.0, 64.0, 4))


# --- Grids ---

class TestGrids:

    def test_geometric_endpoints_and_density(self):
        grid = build_grid(1.0, 2.0, 16)
        assert len(grid) == 17
        assert grid.times[0] == 1.0 and grid.times[-1] == 2.0
        assert grid.spacing == "geometric"

    def test_octave_grid(self):
        assert build_grid(1.0, 4.0, 1).times.tolist() == [1.0, 2.0, 4.0]
        assert len(build_grid(1.0, 1024.0, 32)) == 321

    def test_single_point(self):
        grid = build_grid(5.0, 5.0)
        assert len(grid) == 1
        assert grid.prefix_length(5.0) == 1

    def test_nested_prefix(self):
        grid = build_grid(1.0, 4096.0, 32)
        assert len(grid) == 385
        assert grid.prefix_length(64.0) == 193
        assert grid.prefix_length(4096.0) == 385

    def test_prefix_rejects_off_grid_point(self):
        with pytest.raises(DomainError):
            build_grid(1.0, 4096.0, 32).prefix_length(3.0)

    def test_rejects_bad_times(self):
        with pytest.raises(DomainError):
            TimeGrid(np.array([2.0, 1.0]))
        with pytest.raises(DomainError):
            TimeGrid(np.array([0.0, 1.0]))
        with pytest.raises(DomainError):
            build_grid(2.0, 1.0)

    def test_custom_grid_sorts(self):
        grid = custom_grid([0.3, 0.1, 0.2])
        assert np.allclose(grid.times, [0.1, 0.2, 0.3])
        assert grid.points_per_octave is None


# --- Factorization ---

class TestFactor:

    def test_reproduces_covariance(self, factor):
        assert factor.reproduction_error <= REPRODUCTION_TOL
        assert factor.jitter_applied == 0.0
        assert check_factor(factor) <= REPRODUCTION_TOL

    def test_lower_triangular(self, factor):
        assert np.allclose(np.triu(factor.lower_factor, 1), 0.0)

    def test_failure_carries_diagnostics(self, monkeypatch):
        monkeypatch.setattr(gaussfield, "covariance_matrix", lambda grid, alpha=None: -np.eye(len(grid)))
        with pytest.raises(NumericalError) as err:
            factor_covariance(build_grid(1.0, 4.0, 2))
        assert err.value.diagnostics["min_eigenvalue"] == pytest.approx(-1.0)
        assert err.value.diagnostics["condition"] == np.inf

    def test_size_cap(self):
        with pytest.raises(DomainError):
            factor_covariance(build_grid(1.0, 64.0, 4), max_size=10)

    def test_localized_factor(self):
        grid = build_grid(0.01, 0.1, 2)
        f = factor_covariance(grid, alpha=0.5)
        assert f.alpha == 0.5
        assert check_factor(f) <= REPRODUCTION_TOL
        local = np.diag(covariance_matrix(grid, 0.5))
        assert np.all(local <= var_h(grid.times) + 1e-12)


# --- Sampling and survival ---

class TestSampling:

    def test_deterministic_per_shard(self, factor):
        a = sample_paths(factor, 50, (1, 2)).values
        b = sample_paths(factor, 50, (1, 2)).values
        c = sample_paths(factor, 50, (1, 2), shard=1).values
        assert np.array_equal(a, b)
        assert not np.allclose(a, c)

    def test_counts_monotone(self, factor):
        hits = survival_counts(factor, [0.5, 1.0, 2.0], [1, 5, 25], 2000, (3, 0), shard_size=500)
        assert hits.shape == (3, 3)
        assert np.all(np.diff(hits, axis=0) >= 0)
        assert np.all(np.diff(hits, axis=1) <= 0)
        assert hits.max() <= 2000

    def test_counts_thread_invariant(self, factor):
        one = survival_counts(factor, [0.8, 1.2], [10, 25], 3000, (4, 1), threads=1, shard_size=700)
        many = survival_counts(factor, [0.8, 1.2], [10, 25], 3000, (4, 1), threads=4, shard_size=700)
        assert np.array_equal(one, many)

    def test_counts_match_indicator(self, factor):
        seed = (9, 9)
        hits = survival_counts(factor, [1.0], [len(factor.grid)], 300, seed, shard_size=1000)
        direct = survival_indicator(sample_paths(factor, 300, seed, shard=0), 1.0).sum()
        assert hits[0, 0] == direct

    def test_survivors_nested_path_by_path(self, factor):
        batch = sample_paths(factor, 2000, (8, 0))
        flags = [survival_indicator(batch, th) for th in (0.3, 0.6, 1.0, 1.5, 3.0)]
        for narrow, wide in zip(flags, flags[1:]):
            assert np.all(~narrow | wide)
        assert flags[0].sum() < flags[-1].sum()

    def test_zero_path_survives_every_band(self, factor):
        batch = PathBatch(factor.grid, np.zeros((3, len(factor.grid))))
        for th in (1e-9, 0.1, 1.0, 1e6):
            assert survival_indicator(batch, th).all()

    def test_indicator_rejects_nonpositive_theta(self, factor):
        with pytest.raises(DomainError):
            survival_indicator(sample_paths(factor, 2, (0, 0)), 0.0)

    def test_huge_band_always_survives(self, factor):
        hits = survival_counts(factor, [1e6], [len(factor.grid)], 100, (0, 0))
        assert hits[0, 0] == 100


# --- Checks ---

class TestChecks:

    @pytest.mark.parametrize("c", [0.25, 4.0])
    def test_scaling(self, c):
        grid = build_grid(1.0, 256.0, 4)
        assert scaling_check(c, grid) <= scaling_bound(c, grid)

    def test_calibration(self):
        f = factor_covariance(build_grid(1.0, 16.0, 2))
        out = covariance_calibration(f, 4000, (5, 0), n_batches=20)
        assert out["n_paths"] == 4000
        assert out["empirical"].shape == (9, 9)
        assert out["max_abs_z"] < 6.0

    def test_calibration_needs_batches(self, factor):
        with pytest.raises(DomainError):
            covariance_calibration(factor, 10, (0, 0), n_batches=1)


@pytest.mark.slow
def test_calibration_full_budget():
    grid = build_grid(1.0, 32768.0, 1)
    assert len(grid) == 16
    out = covariance_calibration(factor_covariance(grid), 100_000, (20240611, 0), n_batches=20)
    assert out["n_paths"] == 100_000
    assert out["max_abs_z"] <= 5.0
