import numpy as np
import pytest

from nise import bath, io, noise, services, spectral
from nise.config import RunConfig
from nise.errors import ConfigError
from nise.models import (
    AveragingKind,
    DampingKind,
    NoiseTrajectory,
    SuperResGrid,
)


def load(path, **replacements) -> RunConfig:
    text = path.read_text()
    for old, new in replacements.items():
        text = text.replace(old, new)
    path.write_text(text)
    return RunConfig.from_file(path)


class TestEnsembleRunner:
    def test_chunks(self):
        runner = services.EnsembleRunner(chunk_size=4)
        assert runner.chunks(list(range(10))) == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]

    def test_map_keeps_order(self):
        runner = services.EnsembleRunner(workers=2, chunk_size=1)
        assert list(runner.map(abs, [-3, 1, -2])) == [3, 1, 2]

    def test_reduce(self):
        runner = services.EnsembleRunner()
        assert runner.reduce(abs, [-1, -2, 3], lambda a, b: a + b) == 6

    def test_invalid_settings(self):
        with pytest.raises(ValueError):
            services.EnsembleRunner(workers=0)


class TestSetup:
    def test_site_models_apply_overrides(self, write_run, dimer_text):
        text = dimer_text + "\n[bath.site2]\nreorg_cm1 = 5\n"
        config = RunConfig.from_file(write_run(text))
        first, second = services.site_models(config, 2)
        assert spectral.reorganization_energy(first) == pytest.approx(50.0)
        assert spectral.reorganization_energy(second) == pytest.approx(5.0)

    def test_override_outside_system(self, write_run, dimer_text):
        text = dimer_text + "\n[bath.site3]\nreorg_cm1 = 5\n"
        config = RunConfig.from_file(write_run(text))
        with pytest.raises(ConfigError, match="site3"):
            services.site_models(config, 2)

    def test_tabulated_bath(self, write_run, dimer_text, tmp_path, overdamped_bath):
        series = bath.autocorrelation_from_sd(overdamped_bath, 300.0, 2.0, 1025)
        io.write_sd(tmp_path / "j.csv", bath.sd_from_autocorrelation(series, 300.0))
        text = dimer_text.replace("peaks = 0:50:100", "sd_file = j.csv\nreorg_cm1 = 10")
        config = RunConfig.from_file(write_run(text))
        models = services.site_models(config, 2)
        assert models[0].is_tabulated
        assert spectral.reorganization_energy(models[0]) == pytest.approx(10.0)

    def test_n_points(self):
        assert services.n_points(400.0, 2.0) == 201


class TestNoiseGeneration:
    def test_matches_single_realization(self, dimer_run):
        config = RunConfig.from_file(dimer_run)
        trajectories = list(services.NiseService(config).generate_noise())
        assert [t.realization for t in trajectories] == list(range(6))
        models = services.site_models(config, 2)
        single = noise.generate_site_noise(models, 300.0, 201, 2.0, 7, realization=5)
        np.testing.assert_allclose(trajectories[5].values, single.values, rtol=1e-12)

    def test_reproducible(self, dimer_run):
        config = RunConfig.from_file(dimer_run)
        first = [t.values for t in services.NiseService(config).generate_noise()]
        second = [t.values for t in services.NiseService(config).generate_noise()]
        assert all(np.array_equal(a, b) for a, b in zip(first, second))


class TestPropagation:
    def test_all_averagings(self, dimer_run):
        result = services.NiseService(RunConfig.from_file(dimer_run)).propagate()
        assert set(result.series) == set(AveragingKind)
        assert result.realizations == 6
        assert result.lifetimes is not None
        for series in result.series.values():
            populations = np.diagonal(series.matrices, axis1=1, axis2=2).real
            np.testing.assert_allclose(populations.sum(axis=1), 1.0, atol=1e-8)
            assert series.n_times == 101
        plain = result.series[AveragingKind.PLAIN]
        assert plain.matrices[0, 0, 0].real == pytest.approx(1.0)

    def test_only_requested_series(self, dimer_run):
        config = load(
            dimer_run,
            **{"averaging = plain, constructed, interpolated": "averaging = plain"},
        )
        result = services.NiseService(config).propagate()
        assert list(result.series) == [AveragingKind.PLAIN]
        assert result.lifetimes is None

    def test_independent_of_worker_count(self, dimer_run):
        config = RunConfig.from_file(dimer_run)
        runner = services.EnsembleRunner
        serial = services.NiseService(config, runner(1, 4)).propagate()
        parallel = services.NiseService(config, runner(2, 4)).propagate()
        for kind in serial.series:
            assert np.array_equal(
                serial.series[kind].matrices, parallel.series[kind].matrices
            )

    def test_substeps(self, dimer_run):
        config = load(dimer_run, **{"length_fs = 200\n\n[absorption]": (
            "length_fs = 200\ndt_sub_fs = 1\n\n[absorption]"
        )})
        result = services.NiseService(config).propagate()
        assert result.series[AveragingKind.PLAIN].dt_fs == 1.0
        assert result.series[AveragingKind.PLAIN].n_times == 201

    def test_initial_site_out_of_range(self, dimer_run):
        config = load(dimer_run, **{"initial_site = 1": "initial_site = 3"})
        with pytest.raises(ConfigError, match="initial_site"):
            services.NiseService(config).propagate()

    def test_noise_from_trajectory_files(self, dimer_run, tmp_path):
        rng = np.random.default_rng(1)
        io.write_noise(
            tmp_path / "md.csv",
            NoiseTrajectory(values=20.0 * rng.standard_normal((1000, 2)), dt_fs=2.0),
        )
        config = load(dimer_run, **{"realizations = 6": "trajectory_files = md.csv"})
        result = services.NiseService(config).propagate()
        # a single realization was requested, one window is used
        assert result.realizations == 1

    @pytest.mark.slow
    def test_thermalised_relaxes_further(self, write_run, dimer_text):
        text = (
            dimer_text.replace("realizations = 6", "realizations = 200")
            .replace("length_fs = 200\n\n[abs", "length_fs = 1000\n\n[abs")
            .replace("length_fs = 400", "length_fs = 1000")
            .replace("plain, constructed, interpolated", "plain")
        )
        tnise = RunConfig.from_file(write_run(text))
        plain_text = text.replace("mode = tnise", "mode = nise")
        nise = RunConfig.from_file(write_run(plain_text))
        lower_t = services.NiseService(tnise).propagate().series[AveragingKind.PLAIN]
        lower_n = services.NiseService(nise).propagate().series[AveragingKind.PLAIN]
        assert lower_t.matrices[-1, 1, 1].real > lower_n.matrices[-1, 1, 1].real + 0.05


class TestAbsorption:
    def test_spectrum(self, dimer_run):
        result = services.NiseService(RunConfig.from_file(dimer_run)).absorption()
        assert len(result.spectrum.omega_cm1) == 512
        assert result.sigma[0] == pytest.approx(2.0)
        # the grid is centred back on the mean site energy
        assert result.spectrum.shift_cm1 == pytest.approx(100.0)

    def test_normalize_override(self, dimer_run):
        result = services.NiseService(RunConfig.from_file(dimer_run)).absorption(
            normalize=True
        )
        assert result.spectrum.intensity.max() == pytest.approx(1.0)

    def test_needs_dipoles(self, dimer_run):
        config = load(dimer_run, **{"dipole_file = dipoles.csv\n": ""})
        with pytest.raises(ConfigError, match="dipole_file"):
            services.NiseService(config).absorption()


class TestEquilibrium:
    def test_densities(self, dimer_run):
        result = services.NiseService(RunConfig.from_file(dimer_run)).equilibrium()
        assert np.trace(result.boltzmann) == pytest.approx(1.0)
        assert np.trace(result.snapshot_average) == pytest.approx(1.0)
        assert result.mean_hamiltonian[0, 1] == 100.0
        table = services.equilibrium_table(result)
        assert list(table) == [
            "site",
            "mean_energy_cm1",
            "boltzmann_pop",
            "snapshot_average_pop",
        ]


class TestFileCommands:
    def test_estimate_rejects_mixed_steps(self):
        a = NoiseTrajectory(values=np.zeros((10, 1)), dt_fs=1.0)
        b = NoiseTrajectory(values=np.zeros((10, 1)), dt_fs=2.0)
        with pytest.raises(ConfigError):
            services.estimate_sd([a, b], 300.0, cutoff_fs=5.0)

    @pytest.mark.slow
    def test_estimate_recovers_reorganization(self, overdamped_bath):
        spectra = noise.site_power_spectra([overdamped_bath], 300.0, 4000, 2.0)
        values = noise.generate_ensemble(spectra, 4000, 2.0, 3, range(20))
        trajectories = [NoiseTrajectory(values=v, dt_fs=2.0) for v in values]
        estimate = services.estimate_sd(
            trajectories, 300.0, damping=DampingKind.GAUSSIAN, cutoff_fs=300.0
        )
        assert estimate.model.is_tabulated
        assert spectral.reorganization_energy(estimate.model) == pytest.approx(
            50.0, rel=0.2
        )

    def test_padding_refines_grid(self, overdamped_bath):
        rng = np.random.default_rng(0)
        trajectory = NoiseTrajectory(values=rng.standard_normal(400), dt_fs=2.0)
        estimate = services.estimate_sd(
            [trajectory], 300.0, cutoff_fs=50.0, pad_to_fs=1598.0
        )
        assert len(estimate.damped.values) == 800
        assert len(estimate.autocorrelation.values) == 200

    def test_superres_fit(self, overdamped_bath):
        series = bath.autocorrelation_from_sd(overdamped_bath, 300.0, 2.0, 200)
        grid = SuperResGrid(gammas_cm1=[25.0, 50.0, 75.0], omegas_cm1=[0.0, 100.0])
        solution, model = services.superres_fit(series, 300.0, grid=grid, restarts=0)
        assert solution.debiased
        assert model.is_tabulated
        assert len(solution.retained()) > 0

    def test_resample(self):
        trajectory = NoiseTrajectory(values=np.arange(8.0), dt_fs=2.0)
        assert services.resample_trajectory(trajectory, 1.0).n_steps == 16


FIG3A_HAMILTONIAN = [[-302.4, 134.8], [134.8, 0.0]]

FIG3A_RUN = """\
[system]
hamiltonian_file = hamiltonian.csv
dipole_file = dipoles.csv
initial_site = 1

[bath]
peaks = {peaks}
temperature_K = 300

[noise]
dt_fs = 1
length_fs = 1000
realizations = {realizations}

[propagation]
mode = {mode}
averaging = {averaging}
length_fs = 1000

[run]
seed = 11
chunk_size = 250

[output]
directory = out
"""


@pytest.fixture
def fig3a(write_run):
    """Loads the strongly coupled benchmark dimer with the given settings."""

    def build(peaks="0:192.6:81.8", realizations=2000, mode="tnise", averaging="plain"):
        text = FIG3A_RUN.format(
            peaks=peaks, realizations=realizations, mode=mode, averaging=averaging
        )
        return RunConfig.from_file(write_run(text, hamiltonian=FIG3A_HAMILTONIAN))

    return build


def final_populations(series) -> np.ndarray:
    return np.diagonal(series.matrices[-1]).real


class TestReferenceBehaviour:
    @pytest.mark.slow
    def test_interpolation_approaches_equilibrium(self, fig3a):
        service = services.NiseService(fig3a(averaging="plain, interpolated"))
        result = service.propagate()
        target = np.diagonal(service.equilibrium().boltzmann)

        def mse(kind):
            return np.mean((final_populations(result.series[kind]) - target) ** 2)

        assert mse(AveragingKind.INTERPOLATED) < mse(AveragingKind.PLAIN)

    @pytest.mark.slow
    def test_high_frequency_peak_moves_thermalised_populations(self, fig3a):
        base = "0:20:100, 725:20:100"
        extended = base + ", 1200:20:100"

        def change(mode):
            populations = []
            for peaks in (base, extended):
                config = fig3a(peaks=peaks, realizations=1000, mode=mode)
                series = services.NiseService(config).propagate().series
                populations.append(
                    np.diagonal(series[AveragingKind.PLAIN].matrices, axis1=1, axis2=2)
                )
            return np.max(np.abs(populations[1].real - populations[0].real))

        assert change("tnise") > change("nise")

    def test_weak_bath_spectra_ignore_thermalisation(self, write_run, dimer_text):
        text = dimer_text.replace("peaks = 0:50:100", "peaks = 0:1:100")
        spectra = []
        for mode in ("nise", "tnise"):
            config = RunConfig.from_file(
                write_run(text.replace("mode = tnise", f"mode = {mode}"))
            )
            spectra.append(services.NiseService(config).absorption().spectrum)
        nise, tnise = (s.intensity for s in spectra)
        assert np.max(np.abs(tnise - nise)) < 0.01 * nise.max()
