"""
Colored Gaussian noise with a prescribed spectral density.

White Gaussian noise of twice the requested length is filtered in Fourier
space with the square root of the target power spectrum

    C~(w) = 2 pi hbar k_B T J(w) / w        [cm^-2 fs]

and the second half of the back-transformed signal is dropped, which removes
the periodicity the FFT imposes.
"""
import logging
from typing import List, Optional, Sequence, Union

import numpy as np

from . import bath, spectral, units
from .models import NoiseTrajectory, PowerSpectrum, SpectralDensityModel

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def split_seed(base_seed: int, *keys: int) -> np.random.SeedSequence:
    """Derived seed for stream ``keys`` (e.g. realization, site) of ``base_seed``."""
    return np.random.SeedSequence(base_seed, spawn_key=tuple(int(k) for k in keys))


def realization_rng(base_seed: int, realization: int, site: int) -> np.random.Generator:
    return np.random.default_rng(split_seed(base_seed, realization, site))


def target_power_spectrum(
    model: SpectralDensityModel,
    temperature: float,
    n_steps: int,
    dt_fs: float,
    low_pass_cm1: Optional[float] = None,
) -> PowerSpectrum:
    """
    Power spectrum on the two-sided FFT grid of 2 * n_steps points.

    ``low_pass_cm1`` zeroes every frequency above the cutoff.
    """
    kt = units.thermal_energy(temperature)
    if n_steps < 2:
        raise ValueError(f"Noise needs at least 2 steps, got {n_steps}")
    omega = units.fft_angular_grid(2 * n_steps, dt_fs)
    values = 2 * np.pi * units.HBAR * kt * spectral.j_over_omega(model, np.abs(omega))
    values = np.clip(values, 0.0, None)
    if low_pass_cm1 is not None:
        values[np.abs(omega) > low_pass_cm1] = 0.0
    else:
        bath.nyquist_check(model, dt_fs)
    return PowerSpectrum(omega_cm1=omega, values=values, dt_fs=dt_fs, n_steps=n_steps)


def _filter(white: np.ndarray, spectrum: np.ndarray, n_steps: int, dt_fs: float):
    transformed = np.fft.fft(white, axis=-1) / np.sqrt(dt_fs)
    transformed *= np.sqrt(spectrum)
    return np.fft.ifft(transformed, axis=-1).real[..., :n_steps]


def generate_noise(
    power: PowerSpectrum, n_steps: int, dt_fs: float, seed: SeedLike = None
) -> NoiseTrajectory:
    """One site of noise; the same (power, n_steps, dt_fs, seed) gives the same bits."""
    if n_steps < 2:
        raise ValueError(f"Noise needs at least 2 steps, got {n_steps}")
    if power.n_steps != n_steps:
        raise ValueError(
            f"Power spectrum was built for {power.n_steps} steps, not {n_steps}"
        )
    if not np.isclose(power.dt_fs, dt_fs):
        raise ValueError(
            f"Power spectrum was built for dt = {power.dt_fs} fs, not {dt_fs} fs"
        )
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(2 * n_steps)
    values = _filter(white, power.values, n_steps, dt_fs)
    return NoiseTrajectory(
        values=values, dt_fs=dt_fs, seed=seed if isinstance(seed, int) else None
    )


def site_power_spectra(
    models: Sequence[SpectralDensityModel],
    temperature: float,
    n_steps: int,
    dt_fs: float,
    low_pass_cm1: Optional[float] = None,
) -> np.ndarray:
    """Stacked power spectra, shape (n_sites, 2 * n_steps)."""
    return np.stack(
        [
            target_power_spectrum(
                model, temperature, n_steps, dt_fs, low_pass_cm1
            ).values
            for model in models
        ]
    )


def generate_site_noise(
    models: Sequence[SpectralDensityModel],
    temperature: float,
    n_steps: int,
    dt_fs: float,
    base_seed: int,
    realization: int = 0,
    low_pass_cm1: Optional[float] = None,
) -> NoiseTrajectory:
    """Independent noise per site, drawn from split_seed(base_seed, realization, n)."""
    if not models:
        raise ValueError("At least one site model is required")
    spectra = site_power_spectra(models, temperature, n_steps, dt_fs, low_pass_cm1)
    values = generate_ensemble(spectra, n_steps, dt_fs, base_seed, [realization])[0]
    return NoiseTrajectory(
        values=values, dt_fs=dt_fs, seed=base_seed, realization=realization
    )


def generate_ensemble(
    spectra: np.ndarray,
    n_steps: int,
    dt_fs: float,
    base_seed: int,
    realizations: Sequence[int],
) -> np.ndarray:
    """
    Noise for several realizations at once, shape (R, n_steps, n_sites).

    Each (realization, site) pair has its own stream, so the result for a
    realization does not depend on which batch it was generated in.
    """
    n_sites = spectra.shape[0]
    white = np.empty((len(realizations), n_sites, 2 * n_steps))
    for i, r in enumerate(realizations):
        for n in range(n_sites):
            white[i, n] = realization_rng(base_seed, r, n).standard_normal(2 * n_steps)
    values = _filter(white, spectra[None, :, :], n_steps, dt_fs)
    return np.swapaxes(values, 1, 2)


def windows_from_trajectory(
    trajectory: NoiseTrajectory, window_len: int, stride: int
) -> List[NoiseTrajectory]:
    """Overlapping windows of ``window_len`` samples, ``stride`` samples apart."""
    if stride < 1:
        raise ValueError(f"Stride must be at least one step, got {stride}")
    if window_len < 1:
        raise ValueError(f"Window must hold at least one step, got {window_len}")
    length = trajectory.n_steps
    if window_len > length:
        return []
    count = (length - window_len) // stride + 1
    logger.debug("Splitting %d steps into %d windows", length, count)
    return [
        NoiseTrajectory(
            values=trajectory.values[k * stride : k * stride + window_len],
            dt_fs=trajectory.dt_fs,
            seed=trajectory.seed,
            realization=k,
        )
        for k in range(count)
    ]


def windows_by_time(
    trajectory: NoiseTrajectory, window_fs: float, stride_fs: float
) -> List[NoiseTrajectory]:
    """Windows spanning ``window_fs`` (both end points included)."""
    window_len = int(round(window_fs / trajectory.dt_fs)) + 1
    stride = int(round(stride_fs / trajectory.dt_fs))
    return windows_from_trajectory(trajectory, window_len, stride)
