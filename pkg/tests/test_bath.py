import logging

import numpy as np
import pytest
from pydantic import ValidationError

from nise import bath, noise, spectral
from nise.errors import NumericalWarning
from nise.models import (
    AutocorrelationSeries,
    DampingKind,
    DampingSpec,
    NoiseTrajectory,
    Provenance,
)


@pytest.fixture
def random_trajectory():
    rng = np.random.default_rng(3)
    return NoiseTrajectory(values=rng.standard_normal((400, 2)), dt_fs=1.0)


class TestAutocorrelation:
    def test_fft_matches_direct(self, random_trajectory):
        fast = bath.autocorrelation(random_trajectory, site=1)
        direct = bath.autocorrelation(random_trajectory, site=1, method="direct")
        np.testing.assert_allclose(fast.values, direct.values, atol=1e-10)

    def test_half_the_lags(self, random_trajectory):
        series = bath.autocorrelation(random_trajectory)
        assert len(series.values) == 200
        assert series.provenance == Provenance.ESTIMATED

    def test_too_short(self):
        with pytest.raises(ValueError):
            bath.autocorrelation(NoiseTrajectory(values=[1.0, 2.0, 3.0], dt_fs=1.0))

    def test_average(self):
        a = AutocorrelationSeries(values=[2.0, 1.0, 0.0], dt_fs=1.0)
        b = AutocorrelationSeries(values=[4.0, 1.0, 2.0], dt_fs=1.0)
        averaged = bath.average_autocorrelations([a, b])
        np.testing.assert_allclose(averaged.values, [3.0, 1.0, 1.0])

    def test_average_rejects_mixed_steps(self):
        a = AutocorrelationSeries(values=[2.0, 1.0, 0.0], dt_fs=1.0)
        b = AutocorrelationSeries(values=[2.0, 1.0, 0.0], dt_fs=2.0)
        with pytest.raises(ValueError):
            bath.average_autocorrelations([a, b])

    @pytest.mark.parametrize("method", ["fft", "direct"])
    def test_alternating_sequence(self, method):
        values = np.where(np.arange(200) % 2, -1.0, 1.0)
        trajectory = NoiseTrajectory(values=values, dt_fs=1.0)
        series = bath.autocorrelation(trajectory, method=method)
        expected = np.where(np.arange(100) % 2, -1.0, 1.0)
        np.testing.assert_allclose(series.values, expected, atol=1e-12)


class TestDamping:
    def test_gaussian_at_cutoff(self):
        spec = DampingSpec(kind=DampingKind.GAUSSIAN, cutoff_fs=10.0)
        factor = bath.damping_factor(np.array([0.0, 10.0, 20.0]), spec)
        np.testing.assert_allclose(factor, [1.0, np.exp(-1.0), np.exp(-4.0)])

    def test_exponential(self):
        spec = DampingSpec(kind=DampingKind.EXPONENTIAL, cutoff_fs=10.0)
        assert bath.damping_factor(np.array([20.0]), spec)[0] == pytest.approx(
            np.exp(-2.0)
        )

    def test_step(self):
        spec = DampingSpec(kind=DampingKind.STEP, cutoff_fs=1.0)
        series = AutocorrelationSeries(values=[3.0, 2.0, 1.0], dt_fs=1.0)
        np.testing.assert_array_equal(
            bath.apply_damping(series, spec).values, [3.0, 2.0, 0.0]
        )

    def test_general_needs_exponent(self):
        with pytest.raises(ValidationError):
            DampingSpec(kind=DampingKind.GENERAL, cutoff_fs=10.0)
        spec = DampingSpec(kind=DampingKind.GENERAL, cutoff_fs=10.0, exponent=3.0)
        assert bath.damping_factor(np.array([10.0]), spec)[0] == pytest.approx(
            np.exp(-1.0)
        )

    @pytest.mark.parametrize("cutoff_fs", [1000.0, 5000.0, 15000.0])
    def test_ordering_on_theoretical_autocorrelation(self, three_peak_bath, cutoff_fs):
        clean = bath.autocorrelation_from_sd(three_peak_bath, 300.0, 2.0, 10001)
        kinds = (DampingKind.STEP, DampingKind.GAUSSIAN, DampingKind.EXPONENTIAL)
        step, gaussian, exponential = (
            bath.mae_c(
                bath.apply_damping(clean, DampingSpec(kind=kind, cutoff_fs=cutoff_fs)),
                clean,
            )
            for kind in kinds
        )
        assert step <= gaussian <= exponential


class TestSuggestCutoff:
    def test_finds_noise_floor(self):
        rng = np.random.default_rng(0)
        t = np.arange(4000.0)
        values = 1000.0 * np.exp(-t / 100.0) + rng.standard_normal(4000)
        values[0] = abs(values[0])
        series = AutocorrelationSeries(values=values, dt_fs=1.0)
        suggestion = bath.suggest_cutoff(series, window_fs=500.0)
        assert suggestion.found
        assert 400.0 < suggestion.cutoff_fs < 700.0

    def test_falls_back_without_plateau(self):
        series = AutocorrelationSeries(values=np.linspace(1.0, 0.6, 4000), dt_fs=1.0)
        with pytest.warns(NumericalWarning):
            suggestion = bath.suggest_cutoff(series, window_fs=500.0)
        assert not suggestion.found
        assert suggestion.cutoff_fs == 2000.0

    def test_white_noise_settles_immediately(self):
        rng = np.random.default_rng(11)
        values = rng.standard_normal((100000, 1))
        trajectory = NoiseTrajectory(values=values, dt_fs=2.0)
        series = bath.autocorrelation(trajectory)
        suggestion = bath.suggest_cutoff(series, window_fs=500.0)
        assert suggestion.found
        assert suggestion.cutoff_fs <= 10.0

    def test_noise_free_decay_has_no_floor(self):
        t = np.arange(4000.0)
        series = AutocorrelationSeries(values=np.exp(-t / 100.0), dt_fs=1.0)
        with pytest.warns(NumericalWarning):
            suggestion = bath.suggest_cutoff(series, window_fs=500.0)
        assert not suggestion.found

    def test_late_excursion_does_not_move_cutoff(self):
        rng = np.random.default_rng(0)
        t = np.arange(20000.0)
        values = 1000.0 * np.exp(-t / 100.0) + rng.standard_normal(20000)
        values[0] = abs(values[0])
        values[12000:12600] += 8.0
        series = AutocorrelationSeries(values=values, dt_fs=1.0)
        suggestion = bath.suggest_cutoff(series, window_fs=500.0)
        assert suggestion.found
        assert 400.0 < suggestion.cutoff_fs < 700.0

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_three_peak_noise_is_stable_across_seeds(self, three_peak_bath, seed):
        trajectory = noise.generate_site_noise(
            [three_peak_bath], 300.0, 50000, 2.0, seed
        )
        series = bath.autocorrelation(trajectory)
        suggestion = bath.suggest_cutoff(series, window_fs=500.0)
        assert suggestion.found
        assert suggestion.cutoff_fs <= 1000.0

    def test_window_longer_than_series(self):
        series = AutocorrelationSeries(values=np.ones(10), dt_fs=1.0)
        with pytest.raises(ValueError):
            bath.suggest_cutoff(series, window_fs=50.0)


class TestCosineTransform:
    def test_round_trip(self, overdamped_bath):
        series = bath.autocorrelation_from_sd(overdamped_bath, 300.0, 2.0, 2049)
        model = bath.sd_from_autocorrelation(series, 300.0)
        expected = spectral.eval_sd(overdamped_bath, model.omega_cm1)
        np.testing.assert_allclose(
            model.values_cm1, expected, atol=1e-9 * expected.max()
        )
        assert series.provenance == Provenance.THEORETICAL

    def test_clipping_is_reported(self, caplog):
        t = np.arange(1025.0)
        values = np.where(t <= 50.0, np.exp(-t / 100.0), 0.0)
        series = AutocorrelationSeries(values=values, dt_fs=1.0)
        omega, signed = bath.signed_sd_from_autocorrelation(series, 300.0)
        with caplog.at_level(logging.WARNING, logger="nise.bath"):
            model = bath.sd_from_autocorrelation(series, 300.0)
        assert signed.min() < 0
        assert np.all(model.values_cm1 >= 0)
        np.testing.assert_array_equal(model.omega_cm1, omega)
        assert "Clipping" in caplog.text
        assert "spectral weight" in caplog.text

    def test_exact_transform_is_not_reported(self, overdamped_bath, caplog):
        series = bath.autocorrelation_from_sd(overdamped_bath, 300.0, 2.0, 2049)
        with caplog.at_level(logging.WARNING, logger="nise.bath"):
            bath.sd_from_autocorrelation(series, 300.0)
        assert "Clipping" not in caplog.text

    def test_reorganization_survives_round_trip(self, overdamped_bath):
        series = bath.autocorrelation_from_sd(overdamped_bath, 300.0, 1.0, 8193)
        model = bath.sd_from_autocorrelation(series, 300.0)
        assert spectral.reorganization_energy(model) == pytest.approx(50.0, rel=0.02)

    def test_zero_pad_refines_grid(self, overdamped_bath):
        series = bath.autocorrelation_from_sd(overdamped_bath, 300.0, 2.0, 101)
        padded = bath.zero_pad(series, 401)
        coarse = bath.sd_from_autocorrelation(series, 300.0)
        fine = bath.sd_from_autocorrelation(padded, 300.0)
        assert fine.omega_cm1[1] == pytest.approx(coarse.omega_cm1[1] / 4)
        assert fine.omega_cm1[-1] == pytest.approx(coarse.omega_cm1[-1])

    def test_zero_pad_cannot_shrink(self, overdamped_bath):
        series = bath.autocorrelation_from_sd(overdamped_bath, 300.0, 2.0, 101)
        with pytest.raises(ValueError):
            bath.zero_pad(series, 50)

    def test_nyquist_check(self, overdamped_bath):
        assert bath.nyquist_check(overdamped_bath, 1.0)
        with pytest.warns(NumericalWarning):
            assert not bath.nyquist_check(overdamped_bath, 10.0)


class TestResample:
    def test_shared_samples_are_kept(self, random_trajectory):
        finer = bath.resample(random_trajectory, 0.5)
        assert finer.dt_fs == pytest.approx(0.5)
        assert finer.n_steps == 800
        np.testing.assert_allclose(
            finer.values[::2], random_trajectory.values, atol=1e-10
        )

    def test_odd_length(self):
        rng = np.random.default_rng(5)
        trajectory = NoiseTrajectory(values=rng.standard_normal(101), dt_fs=2.0)
        finer = bath.resample(trajectory, 1.0)
        np.testing.assert_allclose(finer.values[::2], trajectory.values, atol=1e-10)

    def test_taper_keeps_the_mean(self, random_trajectory):
        finer = bath.resample(random_trajectory, 0.5, taper=True)
        np.testing.assert_allclose(
            finer.values.mean(axis=0), random_trajectory.values.mean(axis=0)
        )

    def test_downsampling_rejected(self, random_trajectory):
        with pytest.raises(ValueError):
            bath.resample(random_trajectory, 2.0)

    def test_non_integer_padding_rejected(self, random_trajectory):
        with pytest.raises(ValueError):
            bath.resample(random_trajectory, 0.3)

    def test_bin_cosine_upsampled_ten_times(self):
        t = np.arange(200) * 2.0
        period = 400.0 / 7
        values = np.cos(2 * np.pi * t / period)
        trajectory = NoiseTrajectory(values=values, dt_fs=2.0)
        finer = bath.resample(trajectory, 0.2)
        assert finer.n_steps == 2000
        expected = np.cos(2 * np.pi * np.arange(2000) * 0.2 / period)
        np.testing.assert_allclose(finer.values[:, 0], expected, atol=1e-8)

    def test_power_below_old_nyquist_is_kept(self, random_trajectory):
        finer = bath.resample(random_trajectory, 0.1)
        n, total = random_trajectory.n_steps, finer.n_steps
        before = np.abs(np.fft.fft(random_trajectory.values, axis=0)) / n
        after = np.abs(np.fft.fft(finer.values, axis=0)) / total
        band = n // 2
        np.testing.assert_allclose(after[:band], before[:band], rtol=1e-6, atol=1e-12)
        np.testing.assert_allclose(
            after[total - band + 1 :], before[n - band + 1 :], rtol=1e-6, atol=1e-12
        )


class TestMetrics:
    def test_identical_models(self, overdamped_bath):
        assert bath.mae_sd(overdamped_bath, overdamped_bath) == 0.0

    def test_autocorrelation_offset(self):
        a = AutocorrelationSeries(values=[2.0, 2.0, 2.0], dt_fs=1.0)
        b = AutocorrelationSeries(values=[1.0, 1.0, 1.0], dt_fs=1.0)
        assert bath.mae_c(a, b) == pytest.approx(1.0)
