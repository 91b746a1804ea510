import numpy as np
import pytest

from nise import bath, superres
from nise.errors import NumericalWarning
from nise.models import AutocorrelationSeries, SuperResGrid, SuperResSolution


@pytest.fixture
def small_grid():
    return SuperResGrid(
        gammas_cm1=[10.0, 20.0, 30.0, 40.0],
        omegas_cm1=[0.0, 100.0, 200.0, 300.0, 400.0, 500.0],
    )


@pytest.fixture
def two_mode_series(small_grid):
    """C(t) built from modes (20, 0) with weight 1 and (30, 300) with weight 0.5."""
    coefficients = np.zeros(small_grid.shape)
    coefficients[1, 0] = 1.0
    coefficients[2, 3] = 0.5
    lags = np.arange(400) * 2.0
    operator = superres.DesignOperator(small_grid, lags)
    return AutocorrelationSeries(values=operator.matvec(coefficients), dt_fs=2.0)


class TestDesignMatrix:
    def test_shape_and_origin(self, small_grid):
        matrix = superres.design_matrix(small_grid, [0.0, 5.0, 10.0])
        assert matrix.shape == (4, 6, 3)
        np.testing.assert_array_equal(matrix[:, :, 0], 1.0)

    def test_operator_matches_matrix(self, small_grid):
        lags = np.arange(50) * 2.0
        rng = np.random.default_rng(1)
        coefficients = rng.standard_normal(small_grid.shape)
        residual = rng.standard_normal(50)
        matrix = superres.design_matrix(small_grid, lags)
        operator = superres.DesignOperator(small_grid, lags)
        np.testing.assert_allclose(
            operator.matvec(coefficients),
            np.einsum("ijk,ij->k", matrix, coefficients),
        )
        np.testing.assert_allclose(
            operator.rmatvec(residual), np.einsum("ijk,k->ij", matrix, residual)
        )

    def test_large_exponent_stays_finite(self):
        grid = SuperResGrid(gammas_cm1=[1e6], omegas_cm1=[0.0])
        matrix = superres.design_matrix(grid, [1e6])
        assert np.all(np.isfinite(matrix))

    def test_default_grids(self):
        coarse = SuperResGrid.desk_default()
        fine = SuperResGrid.fine_default()
        assert coarse.shape[0] == 40
        assert fine.shape[0] == 399
        assert fine.shape[1] > coarse.shape[1]
        assert fine.omegas_cm1[0] == 0.0


class TestFit:
    def test_zero_series(self, small_grid):
        series = AutocorrelationSeries(values=np.zeros(20), dt_fs=2.0)
        solution = superres.fit(series, small_grid, restarts=0)
        assert not np.any(solution.coefficients)

    def test_deterministic_for_a_seed(self, small_grid, two_mode_series):
        first = superres.fit(two_mode_series, small_grid, restarts=1, seed=4)
        second = superres.fit(two_mode_series, small_grid, restarts=1, seed=4)
        np.testing.assert_array_equal(first.coefficients, second.coefficients)

    def test_cutoff_limits_fitted_lags(self, small_grid, two_mode_series):
        solution = superres.fit(
            two_mode_series, small_grid, cutoff_fs=100.0, restarts=0
        )
        assert solution.cutoff_fs == 100.0

    @pytest.mark.slow
    def test_recovers_sparse_modes(self, small_grid, two_mode_series):
        solution = superres.fit(two_mode_series, small_grid, restarts=2, seed=0)
        debiased = superres.debias(solution, two_mode_series)
        assert debiased.debiased
        assert np.all(debiased.coefficients >= 0)
        norm = np.linalg.norm(two_mode_series.values)
        assert debiased.residual_norm < 1e-2 * norm
        gamma, omega, weight = max(debiased.retained(), key=lambda row: row[2])
        assert (gamma, omega) == (20.0, 0.0)
        assert weight == pytest.approx(1.0, abs=0.1)


class TestDebias:
    def test_empty_selection_warns(self, small_grid, two_mode_series):
        solution = superres.fit(two_mode_series, small_grid, restarts=0)
        with pytest.warns(NumericalWarning):
            debiased = superres.debias(solution, two_mode_series, threshold=1e9)
        assert debiased.retained() == []

    def test_reconstructed_sd(self, small_grid, two_mode_series):
        solution = superres.fit(two_mode_series, small_grid, restarts=0)
        debiased = superres.debias(solution, two_mode_series)
        model = superres.reconstruct_sd(debiased, np.linspace(0.0, 1000.0, 501), 300.0)
        assert model.values_cm1[0] == 0.0
        assert np.all(model.values_cm1 >= 0)
        assert model.slope_at_zero > 0


class TestSingleMode:
    @pytest.fixture
    def generator(self, small_grid):
        coefficients = np.zeros(small_grid.shape)
        coefficients[1, 3] = 1000.0
        return SuperResSolution(
            grid=small_grid,
            coefficients=coefficients,
            cutoff_fs=20000.0,
            debiased=True,
        )

    def test_reconstruction_matches_cosine_transform(self, generator):
        lags = np.arange(20001) * 1.0
        values = superres.DesignOperator(generator.grid, lags).matvec(
            generator.coefficients
        )
        series = AutocorrelationSeries(values=values, dt_fs=1.0)
        transformed = bath.sd_from_autocorrelation(series, 300.0)
        band = transformed.omega_cm1 <= 2000.0
        omega = transformed.omega_cm1[band]
        reconstructed = superres.reconstruct_sd(generator, omega, 300.0)
        peak = reconstructed.values_cm1.max()
        np.testing.assert_allclose(
            transformed.values_cm1[band], reconstructed.values_cm1, atol=1e-3 * peak
        )

    @pytest.mark.slow
    def test_recovers_on_grid_mode(self, small_grid, generator):
        lags = np.arange(400) * 2.0
        operator = superres.DesignOperator(small_grid, lags)
        values = operator.matvec(generator.coefficients)
        series = AutocorrelationSeries(values=values, dt_fs=2.0)

        solution = superres.fit(series, small_grid, restarts=1, seed=0)
        magnitude = np.abs(solution.coefficients)
        assert np.unravel_index(np.argmax(magnitude), small_grid.shape) == (1, 3)

        debiased = superres.debias(solution, series)
        weights = np.asarray(debiased.coefficients)
        assert np.all(weights >= 0)
        assert weights[1, 3] >= 0.9 * weights.sum()
        assert weights[1, 3] == pytest.approx(1000.0, rel=1e-2)

        omega = np.linspace(0.0, 1000.0, 501)
        target = superres.reconstruct_sd(generator, omega, 300.0).values_cm1
        fitted = superres.reconstruct_sd(debiased, omega, 300.0).values_cm1
        assert np.mean(np.abs(fitted - target)) < 0.05 * target.max()
