"""
CSV readers and writers.

Every file is a header row plus numeric columns. Optional metadata sits in
leading ``# key = value`` comment lines, which readers return alongside the
data. Numbers are written with 17 significant digits so files read back
bit-exactly.
"""
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
import pydantic
import scipy
import sqlmodel

from . import __version__
from .errors import ConfigError
from .models import (
    AbsorptionSpectrum,
    AutocorrelationSeries,
    DipoleSet,
    EnsembleDensitySeries,
    LifetimeSet,
    NoiseTrajectory,
    SpectralDensityModel,
    SuperResSolution,
    SystemHamiltonian,
)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
SD_COLUMNS = ["omega_cm1", "J_cm1"]
AUTOCORRELATION_COLUMNS = ["t_fs", "C_cm2"]
SUPERRES_COLUMNS = ["gamma_cm1", "Omega_cm1", "lambda_cm2"]
SPECTRUM_COLUMNS = ["omega_cm1", "intensity"]
DIPOLE_COLUMNS = ["x", "y", "z"]


def _write(path, frame: pd.DataFrame, metadata: Optional[Dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for key, value in (metadata or {}).items():
            handle.write(f"# {key} = {value}\n")
        frame.to_csv(
            handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
        )
    return path


def read_metadata(path) -> Dict[str, str]:
    metadata = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition("=")
            metadata[key.strip()] = value.strip()
    return metadata


def _read(path, columns: Optional[List[str]] = None) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: file not found")
    try:
        frame = pd.read_csv(path, comment="#")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if columns is not None and list(frame.columns[: len(columns)]) != columns:
        raise ConfigError(
            f"{path}: expected columns {','.join(columns)}, "
            f"got {','.join(map(str, frame.columns))}"
        )
    if frame.isna().any().any():
        raise ConfigError(f"{path}: missing or non-numeric values")
    return frame


def _uniform_step(path, times: np.ndarray) -> float:
    if len(times) < 2:
        raise ConfigError(f"{path}: need at least two rows")
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12) or steps[0] <= 0:
        raise ConfigError(f"{path}: t_fs must be uniformly increasing")
    return float(steps[0])


# Spectral densities


def write_sd(path, model: SpectralDensityModel, metadata: Optional[Dict] = None):
    if not model.is_tabulated:
        raise ValueError("Only tabulated spectral densities can be written")
    extra = dict(metadata or {})
    if model.slope_at_zero is not None:
        extra["slope_at_zero"] = repr(model.slope_at_zero)
    frame = pd.DataFrame({"omega_cm1": model.omega_cm1, "J_cm1": model.values_cm1})
    return _write(path, frame, extra)


def read_sd(path) -> SpectralDensityModel:
    frame = _read(path, SD_COLUMNS)
    slope = read_metadata(path).get("slope_at_zero")
    try:
        return SpectralDensityModel(
            omega_cm1=frame["omega_cm1"].to_numpy(float),
            values_cm1=frame["J_cm1"].to_numpy(float),
            slope_at_zero=None if slope is None else float(slope),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# Noise trajectories


def noise_columns(n_sites: int) -> List[str]:
    return ["t_fs"] + [f"dE_site{n}_cm1" for n in range(1, n_sites + 1)]


def write_noise(path, trajectory: NoiseTrajectory, model_hash: str = "") -> Path:
    frame = pd.DataFrame(
        np.column_stack([trajectory.times_fs, trajectory.values]),
        columns=noise_columns(trajectory.n_sites),
    )
    metadata = {"dt_fs": repr(trajectory.dt_fs)}
    if trajectory.seed is not None:
        metadata["seed"] = trajectory.seed
    if trajectory.realization is not None:
        metadata["realization"] = trajectory.realization
    if model_hash:
        metadata["model_hash"] = model_hash
    return _write(path, frame, metadata)


def read_noise(path) -> NoiseTrajectory:
    frame = _read(path)
    n_sites = frame.shape[1] - 1
    if n_sites < 1 or list(frame.columns) != noise_columns(n_sites):
        raise ConfigError(
            f"{path}: expected columns t_fs,dE_site1_cm1,... got "
            f"{','.join(map(str, frame.columns))}"
        )
    metadata = read_metadata(path)
    times = frame["t_fs"].to_numpy(float)
    dt = float(metadata["dt_fs"]) if "dt_fs" in metadata else _uniform_step(path, times)
    seed = metadata.get("seed")
    realization = metadata.get("realization")
    return NoiseTrajectory(
        values=frame.iloc[:, 1:].to_numpy(float),
        dt_fs=dt,
        seed=None if seed is None else int(seed),
        realization=None if realization is None else int(realization),
    )


def read_noise_files(paths: Iterable) -> List[NoiseTrajectory]:
    """Trajectories sharing one time step and site count."""
    paths = list(paths)
    trajectories = [read_noise(path) for path in paths]
    if not trajectories:
        raise ConfigError("No trajectory files given")
    first = trajectories[0]
    for path, other in zip(paths, trajectories):
        if not np.isclose(other.dt_fs, first.dt_fs, rtol=1e-9):
            raise ConfigError(
                f"{path}: time step {other.dt_fs} fs differs from {first.dt_fs} fs"
            )
        if other.n_sites != first.n_sites:
            raise ConfigError(
                f"{path}: {other.n_sites} sites, expected {first.n_sites}"
            )
    return trajectories


# Autocorrelations and super-resolution


def write_autocorrelation(path, series: AutocorrelationSeries, metadata=None):
    frame = pd.DataFrame({"t_fs": series.times_fs, "C_cm2": series.values})
    extra = {"provenance": series.provenance.value}
    extra.update(metadata or {})
    return _write(path, frame, extra)


def read_autocorrelation(path) -> AutocorrelationSeries:
    frame = _read(path, AUTOCORRELATION_COLUMNS)
    dt = _uniform_step(path, frame["t_fs"].to_numpy(float))
    provenance = read_metadata(path).get("provenance", "estimated")
    try:
        return AutocorrelationSeries(
            values=frame["C_cm2"].to_numpy(float), dt_fs=dt, provenance=provenance
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def write_superres(path, solution: SuperResSolution) -> Path:
    triples = solution.retained()
    frame = pd.DataFrame(triples, columns=SUPERRES_COLUMNS)
    metadata = {
        "a": repr(solution.a),
        "b": repr(solution.b),
        "c": repr(solution.c),
        "cutoff_fs": repr(solution.cutoff_fs),
        "debiased": str(solution.debiased).lower(),
        "residual_norm": repr(solution.residual_norm),
    }
    return _write(path, frame, metadata)


def read_superres(path) -> List[Tuple[float, float, float]]:
    frame = _read(path, SUPERRES_COLUMNS)
    return [tuple(map(float, row)) for row in frame.itertuples(index=False)]


# Populations, densities and lifetimes


def population_columns(n_sites: int) -> List[str]:
    return ["t_fs"] + [f"pop_site{n}" for n in range(1, n_sites + 1)]


def write_populations(path, series: EnsembleDensitySeries) -> Path:
    diagonal = np.diagonal(series.matrices, axis1=1, axis2=2).real
    frame = pd.DataFrame(
        np.column_stack([series.times_fs, diagonal]),
        columns=population_columns(series.n_sites),
    )
    return _write(path, frame, {"averaging": series.averaging.value})


def read_populations(path) -> Tuple[np.ndarray, np.ndarray]:
    """(t_fs, populations) with populations of shape (n_times, N)."""
    frame = _read(path)
    if list(frame.columns) != population_columns(frame.shape[1] - 1):
        raise ConfigError(f"{path}: expected columns t_fs,pop_site1,...")
    return frame["t_fs"].to_numpy(float), frame.iloc[:, 1:].to_numpy(float)


def write_density(path, series: EnsembleDensitySeries) -> Path:
    """Flattened real and imaginary parts of rho(t), row-major, one row per step."""
    n = series.n_sites
    labels = [f"{m}_{k}" for m in range(1, n + 1) for k in range(1, n + 1)]
    flat = np.asarray(series.matrices).reshape(series.n_times, n * n)
    frame = pd.DataFrame(
        np.column_stack([series.times_fs, flat.real, flat.imag]),
        columns=["t_fs"]
        + [f"re_rho_{x}" for x in labels]
        + [f"im_rho_{x}" for x in labels],
    )
    return _write(path, frame, {"averaging": series.averaging.value})


def write_lifetimes(path, lifetimes: LifetimeSet) -> Path:
    frame = pd.DataFrame(
        {
            "site": np.arange(1, len(lifetimes.taus_fs) + 1),
            "tau_fs": lifetimes.taus_fs,
            "flag": np.where(lifetimes.fallback, "fallback", "fit"),
        }
    )
    return _write(path, frame)


def write_table(path, frame: pd.DataFrame, metadata: Optional[Dict] = None) -> Path:
    return _write(path, frame, metadata)


# Spectra


def write_spectrum(path, spectrum: AbsorptionSpectrum) -> Path:
    frame = pd.DataFrame(
        {"omega_cm1": spectrum.omega_cm1, "intensity": spectrum.intensity}
    )
    metadata = {
        "shift_cm1": repr(spectrum.shift_cm1),
        "normalization": spectrum.normalization,
    }
    return _write(path, frame, metadata)


def read_spectrum(path) -> AbsorptionSpectrum:
    frame = _read(path, SPECTRUM_COLUMNS)
    metadata = read_metadata(path)
    try:
        return AbsorptionSpectrum(
            omega_cm1=frame["omega_cm1"].to_numpy(float),
            intensity=frame["intensity"].to_numpy(float),
            shift_cm1=float(metadata.get("shift_cm1", 0.0)),
            normalization=metadata.get("normalization", "none"),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# System definition


def write_hamiltonian(path, hamiltonian: SystemHamiltonian) -> Path:
    """Square matrix in cm^-1 with header h1..hN."""
    n = hamiltonian.n_sites
    frame = pd.DataFrame(
        hamiltonian.matrix, columns=[f"h{k}" for k in range(1, n + 1)]
    )
    return _write(path, frame)


def read_hamiltonian(path) -> SystemHamiltonian:
    frame = _read(path)
    expected = [f"h{k}" for k in range(1, frame.shape[1] + 1)]
    if list(frame.columns) != expected:
        raise ConfigError(f"{path}: expected columns h1,...,h{frame.shape[1]}")
    try:
        return SystemHamiltonian(matrix=frame.to_numpy(float))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def write_dipoles(path, dipoles: DipoleSet) -> Path:
    vectors = np.asarray(dipoles.vectors)
    frame = pd.DataFrame(vectors, columns=DIPOLE_COLUMNS[: vectors.shape[1]])
    return _write(path, frame)


def read_dipoles(path) -> DipoleSet:
    frame = _read(path)
    axes = frame.shape[1]
    if not 1 <= axes <= 3 or list(frame.columns) != DIPOLE_COLUMNS[:axes]:
        raise ConfigError(f"{path}: expected columns x,y,z")
    try:
        return DipoleSet(vectors=frame.to_numpy(float))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# Manifests


def package_versions() -> Dict[str, str]:
    return {
        "nise": __version__,
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
        "scipy": scipy.__version__,
        "sqlmodel": sqlmodel.__version__,
    }


def manifest(command: str, config_hash: str, seed, outputs: Iterable) -> Dict:
    return {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "versions": package_versions(),
        "outputs": sorted(str(path) for path in outputs),
    }


def write_manifest(path, content: Dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(content, indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8")
    logger.info("Wrote manifest %s", path)
    return path
