"""
Workflows behind the command-line commands.

Realizations are split into chunks of fixed size. Each chunk is a pure
function of its inputs and returns partial sums, and partial sums are added
in chunk order, so results do not depend on the number of workers.
"""
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from typing import (
    Callable,
    Dict,
    Iterable,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from pydantic import Field

from . import (
    averaging,
    bath,
    io,
    noise,
    observables,
    propagation,
    spectral,
    superres,
)
from .config import RunConfig
from .errors import ConfigError, NumericalError, NumericalWarning
from .models import (
    AbsorptionSpectrum,
    ArrayModel,
    AutocorrelationSeries,
    AveragingKind,
    ComplexArray,
    DampingKind,
    DampingSpec,
    DipoleSet,
    DrudeLorentzPeak,
    EnsembleDensitySeries,
    FloatArray,
    LifetimeSet,
    NoiseTrajectory,
    PropagationMode,
    SpectralDensityModel,
    SuperResGrid,
    SuperResSolution,
    SystemHamiltonian,
)

logger = logging.getLogger(__name__)


class EnsembleRunner:
    """Fixed-size chunks evaluated in-process or in a process pool."""

    def __init__(self, workers: int = 1, chunk_size: int = 64):
        if workers < 1:
            raise ValueError(f"Worker count must be at least 1, got {workers}")
        if chunk_size < 1:
            raise ValueError(f"Chunk size must be at least 1, got {chunk_size}")
        self.workers = workers
        self.chunk_size = chunk_size

    def chunks(self, items: Sequence) -> List[Sequence]:
        return [
            items[start : start + self.chunk_size]
            for start in range(0, len(items), self.chunk_size)
        ]

    def map(self, function: Callable, jobs: Sequence) -> Iterator:
        """Results in job order."""
        if self.workers == 1 or len(jobs) <= 1:
            for index, job in enumerate(jobs):
                logger.debug("Chunk %d/%d", index + 1, len(jobs))
                yield function(job)
            return
        with ProcessPoolExecutor(max_workers=self.workers) as executor:
            for index, result in enumerate(executor.map(function, jobs)):
                logger.debug("Chunk %d/%d", index + 1, len(jobs))
                yield result

    def reduce(self, function: Callable, jobs: Sequence, combine: Callable):
        total = None
        for partial in self.map(function, jobs):
            total = partial if total is None else combine(total, partial)
        return total


# Chunk evaluation


class ChunkJob(ArrayModel):
    hamiltonian: FloatArray
    dt_fs: float = Field(gt=0)
    n_points: int = Field(ge=2)
    temperature: float = Field(gt=0)
    base_seed: int = 0
    realizations: Tuple[int, ...] = ()
    spectra: Optional[FloatArray] = None
    windows: Optional[FloatArray] = None
    modes: Tuple[PropagationMode, ...] = ()
    dt_sub_fs: Optional[float] = None
    initial_state: Optional[ComplexArray] = None
    dipole_gram: Optional[FloatArray] = None
    snapshot_boltzmann: bool = False


class EnsembleSums(ArrayModel):
    """Sums over the realizations of one or more chunks for one mode."""

    count: int = 0
    density: Optional[ComplexArray] = None
    survival: Optional[FloatArray] = None
    sigma: Optional[ComplexArray] = None
    degenerate_steps: int = 0

    def merged(self, other: "EnsembleSums") -> "EnsembleSums":
        def add(a, b):
            return None if a is None else a + b

        return EnsembleSums(
            count=self.count + other.count,
            density=add(self.density, other.density),
            survival=add(self.survival, other.survival),
            sigma=add(self.sigma, other.sigma),
            degenerate_steps=self.degenerate_steps + other.degenerate_steps,
        )


class ChunkResult(ArrayModel):
    count: int
    noise_sum: FloatArray
    modes: Dict[PropagationMode, EnsembleSums] = {}
    boltzmann_sum: Optional[FloatArray] = None

    def merged(self, other: "ChunkResult") -> "ChunkResult":
        boltzmann = None
        if self.boltzmann_sum is not None:
            boltzmann = self.boltzmann_sum + other.boltzmann_sum
        return ChunkResult(
            count=self.count + other.count,
            noise_sum=self.noise_sum + other.noise_sum,
            modes={m: s.merged(other.modes[m]) for m, s in self.modes.items()},
            boltzmann_sum=boltzmann,
        )


def chunk_noise(job: ChunkJob) -> np.ndarray:
    """Noise for the chunk, shape (R, n_points, N)."""
    if job.windows is not None:
        return np.asarray(job.windows)
    return noise.generate_ensemble(
        np.asarray(job.spectra),
        job.n_points,
        job.dt_fs,
        job.base_seed,
        job.realizations,
    )


def _propagate_chunk(job: ChunkJob, values: np.ndarray, dt_fs: float, mode):
    propagator = propagation.Propagator(
        job.hamiltonian, dt_fs, mode=mode, temperature=job.temperature
    )
    n_times, n_sites = values.shape[1], values.shape[2]
    tnise = mode == PropagationMode.TNISE
    density = survival = sigma = None
    if job.initial_state is not None:
        density = np.zeros((n_times, n_sites, n_sites), dtype=complex)
        survival = np.zeros((n_times, n_sites))
    if job.dipole_gram is not None:
        sigma = np.zeros(n_times, dtype=complex)

    for i, matrices in enumerate(propagator.run(values)):
        if density is not None:
            psi = propagation.project(matrices, job.initial_state, normalize=tnise)
            density[i] = np.einsum("rn,rm->nm", psi, psi.conj())
            diagonal = np.diagonal(matrices, axis1=1, axis2=2)
            survival[i] = np.sum(np.abs(diagonal) ** 2, axis=0)
        if sigma is not None:
            sigma[i] = np.sum(
                observables.sigma_from_propagators(matrices, job.dipole_gram)
            )
    return EnsembleSums(
        count=values.shape[0],
        density=density,
        survival=survival,
        sigma=sigma,
        degenerate_steps=propagator.degenerate_steps,
    )


def run_chunk(job: ChunkJob) -> ChunkResult:
    values = chunk_noise(job)
    if not np.all(np.isfinite(values)):
        raise NumericalError("Noise contains NaN or infinite values")
    held, dt = propagation.substep_noise(values, job.dt_fs, job.dt_sub_fs)
    modes = {mode: _propagate_chunk(job, held, dt, mode) for mode in job.modes}
    boltzmann = None
    if job.snapshot_boltzmann:
        samples = values.reshape(-1, values.shape[-1])
        mean = averaging.mean_boltzmann_density(
            job.hamiltonian, samples, job.temperature
        )
        boltzmann = mean.real * len(samples)
    return ChunkResult(
        count=values.shape[0] * values.shape[1],
        noise_sum=values.sum(axis=(0, 1)),
        modes=modes,
        boltzmann_sum=boltzmann,
    )


# Results


class PropagationResult(ArrayModel):
    series: Dict[AveragingKind, EnsembleDensitySeries]
    lifetimes: Optional[LifetimeSet] = None
    realizations: int
    degenerate_steps: int = 0


class AbsorptionResult(ArrayModel):
    spectrum: AbsorptionSpectrum
    sigma: ComplexArray
    dt_fs: float
    realizations: int


class EquilibriumResult(ArrayModel):
    mean_hamiltonian: FloatArray
    boltzmann: FloatArray
    snapshot_average: FloatArray
    temperature: float


class SdEstimate(ArrayModel):
    autocorrelation: AutocorrelationSeries
    damped: AutocorrelationSeries
    damping: DampingSpec
    cutoff_found: bool
    model: SpectralDensityModel


# Bath and system set-up


def peak_model(peaks) -> SpectralDensityModel:
    return spectral.drude_lorentz(
        *(
            DrudeLorentzPeak.from_width_time(p.center_cm1, p.reorg_cm1, p.width_fs)
            for p in peaks
        )
    )


def site_models(config: RunConfig, n_sites: int) -> List[SpectralDensityModel]:
    """Spectral density per site with ``[bath.siteN]`` overrides applied."""
    extra = [site for site in config.sites if not 1 <= site <= n_sites]
    if extra:
        raise ConfigError(
            f"[bath.site{extra[0]}]: the system only has {n_sites} sites"
        )
    tables: Dict[str, SpectralDensityModel] = {}
    models = []
    for site in range(1, n_sites + 1):
        settings = config.site_bath(site)
        if settings.peaks is not None:
            model = peak_model(settings.peaks)
        else:
            path = config.resolve(settings.sd_file)
            if str(path) not in tables:
                tables[str(path)] = io.read_sd(path)
            model = tables[str(path)]
        if settings.reorg_cm1 is not None:
            model = spectral.rescale_to_lambda(model, settings.reorg_cm1)
        models.append(model)
    return models


def model_hash(models: Iterable[SpectralDensityModel]) -> str:
    return "-".join(spectral.fingerprint(model) for model in models)


def load_hamiltonian(config: RunConfig) -> SystemHamiltonian:
    if config.system.hamiltonian_file is None:
        raise ConfigError("[system] hamiltonian_file: required for this command")
    return io.read_hamiltonian(config.resolve(config.system.hamiltonian_file))


def load_dipoles(config: RunConfig, n_sites: int) -> DipoleSet:
    if config.system.dipole_file is None:
        raise ConfigError("[system] dipole_file: absorption needs dipoles")
    dipoles = io.read_dipoles(config.resolve(config.system.dipole_file))
    if dipoles.n_sites != n_sites:
        raise ConfigError(
            f"[system] dipole_file: {dipoles.n_sites} dipoles for {n_sites} sites"
        )
    return dipoles


def n_points(length_fs: float, dt_fs: float) -> int:
    return int(round(length_fs / dt_fs)) + 1


def _step(job: ChunkJob, dt_sub_fs: Optional[float]) -> float:
    return job.dt_fs / propagation.substep_repeats(job.dt_fs, dt_sub_fs)


class NiseService:
    """Configuration-driven workflows: noise, propagation, spectra, equilibrium."""

    def __init__(self, config: RunConfig, runner: Optional[EnsembleRunner] = None):
        self.config = config
        self.runner = runner or EnsembleRunner(
            workers=config.run.workers, chunk_size=config.run.chunk_size
        )

    @property
    def temperature(self) -> float:
        return self.config.bath.temperature_K

    def _system_size(self) -> int:
        if self.config.system.hamiltonian_file is not None:
            return load_hamiltonian(self.config).n_sites
        return max(self.config.sites, default=1)

    # noise sources

    def _file_windows(self, length_fs: float, n_sites: int):
        settings = self.config.noise
        trajectories = io.read_noise_files(
            self.config.resolve(path) for path in settings.trajectory_files
        )
        if settings.resample_dt_fs is not None:
            trajectories = [
                bath.resample(t, settings.resample_dt_fs) for t in trajectories
            ]
        dt = trajectories[0].dt_fs
        if trajectories[0].n_sites != n_sites:
            raise ConfigError(
                f"[noise] trajectory_files: {trajectories[0].n_sites} sites "
                f"for a {n_sites}-site system"
            )
        stride = settings.stride_fs or length_fs
        windows = [
            window.values
            for trajectory in trajectories
            for window in noise.windows_by_time(trajectory, length_fs, stride)
        ]
        if not windows:
            raise ConfigError(
                "[noise] trajectory_files: trajectories are shorter than "
                f"{length_fs} fs"
            )
        if len(windows) < settings.realizations:
            logger.warning(
                "Only %d noise windows available, %d requested",
                len(windows),
                settings.realizations,
            )
        return np.stack(windows[: settings.realizations]), dt

    def _jobs(self, hamiltonian: np.ndarray, length_fs: float, **options):
        n_sites = hamiltonian.shape[0]
        settings = self.config.noise
        common = dict(
            hamiltonian=hamiltonian,
            temperature=self.temperature,
            base_seed=self.config.run.seed,
            **options,
        )
        if settings.trajectory_files:
            windows, dt = self._file_windows(length_fs, n_sites)
            points = windows.shape[1]
            indices = list(range(len(windows)))
            return [
                ChunkJob(
                    dt_fs=dt,
                    n_points=points,
                    realizations=tuple(chunk),
                    windows=windows[chunk[0] : chunk[-1] + 1],
                    **common,
                )
                for chunk in self.runner.chunks(indices)
            ]

        dt = settings.dt_fs
        points = n_points(length_fs, dt)
        models = site_models(self.config, n_sites)
        spectra = noise.site_power_spectra(
            models, self.temperature, points, dt, self.config.bath.low_pass_cm1
        )
        indices = list(range(settings.realizations))
        return [
            ChunkJob(
                dt_fs=dt,
                n_points=points,
                realizations=tuple(chunk),
                spectra=spectra,
                **common,
            )
            for chunk in self.runner.chunks(indices)
        ]

    def _reduce(self, jobs: List[ChunkJob]) -> ChunkResult:
        result = self.runner.reduce(run_chunk, jobs, lambda a, b: a.merged(b))
        degenerate = sum(s.degenerate_steps for s in result.modes.values())
        if degenerate:
            warnings.warn(
                f"{degenerate} steps rotated the eigenframe by more than "
                f"|S_aa| < {propagation.DEGENERATE_OVERLAP}; consider a smaller "
                "time step",
                NumericalWarning,
                stacklevel=3,
            )
        return result

    # commands

    def generate_noise(self) -> Iterator[NoiseTrajectory]:
        """Yields one N-site trajectory per realization, in realization order."""
        settings = self.config.noise
        n_sites = self._system_size()
        models = site_models(self.config, n_sites)
        points = n_points(settings.length_fs, settings.dt_fs)
        spectra = noise.site_power_spectra(
            models,
            self.temperature,
            points,
            settings.dt_fs,
            self.config.bath.low_pass_cm1,
        )
        jobs = [
            ChunkJob(
                hamiltonian=np.zeros((n_sites, n_sites)),
                dt_fs=settings.dt_fs,
                n_points=points,
                temperature=self.temperature,
                base_seed=self.config.run.seed,
                realizations=tuple(chunk),
                spectra=spectra,
            )
            for chunk in self.runner.chunks(list(range(settings.realizations)))
        ]
        for job, values in zip(jobs, self.runner.map(chunk_noise, jobs)):
            for realization, trajectory in zip(job.realizations, values):
                yield NoiseTrajectory(
                    values=trajectory,
                    dt_fs=settings.dt_fs,
                    seed=self.config.run.seed,
                    realization=realization,
                )

    def propagate(self) -> PropagationResult:
        settings = self.config.propagation
        hamiltonian = load_hamiltonian(self.config)
        n_sites = hamiltonian.n_sites
        if self.config.system.initial_site > n_sites:
            raise ConfigError(
                f"[system] initial_site: {self.config.system.initial_site} is "
                f"outside 1..{n_sites}"
            )
        start = self.config.system.initial_site - 1
        psi0 = propagation.initial_vector(start, n_sites)
        wanted = set(settings.averaging)
        modes = [settings.mode]
        interpolate = AveragingKind.INTERPOLATED in wanted
        if interpolate and settings.mode != PropagationMode.NISE:
            modes.append(PropagationMode.NISE)

        jobs = self._jobs(
            np.asarray(hamiltonian.matrix),
            settings.length_fs,
            modes=tuple(modes),
            dt_sub_fs=settings.dt_sub_fs,
            initial_state=psi0,
        )
        result = self._reduce(jobs)
        dt = _step(jobs[0], settings.dt_sub_fs)

        def plain(mode):
            sums = result.modes[mode]
            return EnsembleDensitySeries(
                matrices=propagation.hermitize(np.asarray(sums.density) / sums.count),
                dt_fs=dt,
                averaging=AveragingKind.PLAIN,
            )

        thermalised = plain(settings.mode)
        series = {AveragingKind.PLAIN: thermalised}
        constructed = None
        if wanted & {AveragingKind.CONSTRUCTED, AveragingKind.INTERPOLATED}:
            constructed = averaging.constructed_series(thermalised)
            series[AveragingKind.CONSTRUCTED] = constructed

        lifetimes = None
        if interpolate:
            nise = result.modes[PropagationMode.NISE]
            if settings.lifetime_source == "survival":
                lifetimes = averaging.fit_lifetimes(
                    np.asarray(nise.survival) / nise.count, dt
                )
            else:
                lifetimes = averaging.fit_lifetimes(plain(PropagationMode.NISE))
            series[AveragingKind.INTERPOLATED] = averaging.interpolated_populations(
                thermalised, constructed, lifetimes, settings.interpolation_factor
            )

        series = {kind: s for kind, s in series.items() if kind in wanted}
        count = result.modes[settings.mode].count
        logger.info("Propagated %d realizations of %d sites", count, n_sites)
        return PropagationResult(
            series=series,
            lifetimes=lifetimes,
            realizations=count,
            degenerate_steps=sum(s.degenerate_steps for s in result.modes.values()),
        )

    def absorption(
        self, normalize: Optional[bool] = None, align_to: Optional[str] = None
    ) -> AbsorptionResult:
        settings = self.config.absorption
        hamiltonian = load_hamiltonian(self.config)
        dipoles = load_dipoles(self.config, hamiltonian.n_sites)

        # remove the fast carrier oscillation; it returns as a grid shift
        mean_energy = float(np.mean(hamiltonian.site_energies))
        shifted = np.asarray(hamiltonian.matrix) - mean_energy * np.eye(
            hamiltonian.n_sites
        )
        offset = 0.0 if settings.center_on_mean_site_energy else mean_energy

        jobs = self._jobs(
            shifted,
            settings.length_fs,
            modes=(self.config.propagation.mode,),
            dt_sub_fs=self.config.propagation.dt_sub_fs,
            dipole_gram=observables.dipole_gram(dipoles),
        )
        result = self._reduce(jobs)
        sums = result.modes[self.config.propagation.mode]
        sigma = np.asarray(sums.sigma) / sums.count
        dt = _step(jobs[0], self.config.propagation.dt_sub_fs)
        spectrum = observables.absorption_spectrum(
            sigma, dt, window=settings.window, shift_cm1=offset, n_fft=settings.n_fft
        )

        if normalize is None:
            normalize = settings.normalize
        if normalize:
            spectrum = observables.normalize_peak(spectrum)
        reference = align_to if align_to is not None else settings.align_to
        if reference is not None:
            target = io.read_spectrum(self.config.resolve(reference))
            spectrum = observables.apply_shift(
                spectrum, observables.align_shift(spectrum, target)
            )
        return AbsorptionResult(
            spectrum=spectrum, sigma=sigma, dt_fs=dt, realizations=sums.count
        )

    def equilibrium(self) -> EquilibriumResult:
        hamiltonian = load_hamiltonian(self.config)
        jobs = self._jobs(
            np.asarray(hamiltonian.matrix),
            self.config.propagation.length_fs,
            snapshot_boltzmann=True,
        )
        result = self._reduce(jobs)
        mean_noise = np.asarray(result.noise_sum) / result.count
        mean_h = np.asarray(hamiltonian.matrix) + np.diag(mean_noise)
        return EquilibriumResult(
            mean_hamiltonian=mean_h,
            boltzmann=propagation.boltzmann_density(mean_h, self.temperature).real,
            snapshot_average=np.asarray(result.boltzmann_sum) / result.count,
            temperature=self.temperature,
        )


# File-driven commands


def estimate_sd(
    trajectories: Sequence[NoiseTrajectory],
    temperature: float,
    damping: DampingKind = DampingKind.GAUSSIAN,
    cutoff_fs: Optional[float] = None,
    exponent: Optional[float] = None,
    cutoff_window_fs: float = 500.0,
    pad_to_fs: Optional[float] = None,
    site: int = 0,
) -> SdEstimate:
    """Averaged autocorrelation, damped and cosine transformed to J(w)."""
    if not trajectories:
        raise ValueError("Spectral density estimation needs at least one trajectory")
    dt = trajectories[0].dt_fs
    for trajectory in trajectories[1:]:
        if not np.isclose(trajectory.dt_fs, dt, rtol=1e-9):
            raise ConfigError(
                f"Trajectories have mismatched time steps ({trajectory.dt_fs} fs "
                f"and {dt} fs)"
            )
    length = min(t.n_steps for t in trajectories)
    series = bath.average_autocorrelations(
        [
            bath.autocorrelation(
                t.model_copy(update={"values": t.values[:length]}), site=site
            )
            for t in trajectories
        ]
    )

    found = True
    if cutoff_fs is None:
        suggestion = bath.suggest_cutoff(series, window_fs=cutoff_window_fs)
        cutoff_fs, found = suggestion.cutoff_fs, suggestion.found
    spec = DampingSpec(kind=damping, cutoff_fs=cutoff_fs, exponent=exponent)
    damped = bath.apply_damping(series, spec)
    if pad_to_fs is not None:
        damped = bath.zero_pad(damped, n_points(pad_to_fs, dt))
    model = bath.sd_from_autocorrelation(damped, temperature)
    logger.info(
        "Estimated J(w) from %d trajectories with %s damping at t_c = %.1f fs",
        len(trajectories),
        damping.value,
        cutoff_fs,
    )
    return SdEstimate(
        autocorrelation=series,
        damped=damped,
        damping=spec,
        cutoff_found=found,
        model=model,
    )


def superres_fit(
    series: AutocorrelationSeries,
    temperature: float,
    grid: Optional[SuperResGrid] = None,
    a: float = 1e4,
    b: float = 1.0,
    c: float = 0.1,
    cutoff_fs: Optional[float] = None,
    threshold: float = superres.DEBIAS_THRESHOLD,
    restarts: int = 3,
    seed: int = 0,
    omega_cm1: Optional[np.ndarray] = None,
) -> Tuple[SuperResSolution, SpectralDensityModel]:
    """Sparse fit, debias, and the reconstructed spectral density."""
    grid = grid or SuperResGrid.desk_default()
    solution = superres.fit(
        series,
        grid,
        a=a,
        b=b,
        c=c,
        cutoff_fs=cutoff_fs,
        restarts=restarts,
        seed=seed,
    )
    solution = superres.debias(solution, series, threshold=threshold)
    if omega_cm1 is None:
        top = float(grid.omegas_cm1[-1] + 5 * grid.gammas_cm1[-1])
        omega_cm1 = np.linspace(0.0, top, 4001)
    return solution, superres.reconstruct_sd(solution, omega_cm1, temperature)


def resample_trajectory(
    trajectory: NoiseTrajectory, dt_target_fs: float, taper: bool = False
) -> NoiseTrajectory:
    return bath.resample(trajectory, dt_target_fs, taper=taper)


def equilibrium_table(result: EquilibriumResult):
    """Per-site columns: mean energy and the two equilibrium populations."""
    return {
        "site": np.arange(1, len(result.boltzmann) + 1),
        "mean_energy_cm1": np.diag(result.mean_hamiltonian),
        "boltzmann_pop": np.diag(result.boltzmann),
        "snapshot_average_pop": np.diag(result.snapshot_average),
    }
