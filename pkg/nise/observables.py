"""
Populations and linear absorption.

The response function sigma(t) = sum_axes sum_mn d_m U_mn(t, 0) d_n is
Fourier transformed with a half-weighted first point; the spectrum is its
real part on an ascending frequency grid in cm^-1.
"""
import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import units
from .models import (
    AbsorptionSpectrum,
    DipoleSet,
    EnsembleDensitySeries,
    PropagatorSeries,
)

logger = logging.getLogger(__name__)


def dipole_gram(dipoles: DipoleSet) -> np.ndarray:
    """G_mn = d_m . d_n summed over Cartesian axes."""
    vectors = np.asarray(dipoles.vectors)
    return vectors @ vectors.T


def sigma_from_propagators(propagators: np.ndarray, gram: np.ndarray) -> np.ndarray:
    """sigma for stacked propagators (..., N, N)."""
    return np.einsum("...mn,mn->...", propagators, gram)


def sigma_t(
    propagators: Union[PropagatorSeries, Sequence[PropagatorSeries]],
    dipoles: DipoleSet,
) -> np.ndarray:
    """Realization-averaged sigma(t_i), complex, one value per time point."""
    if isinstance(propagators, PropagatorSeries):
        propagators = [propagators]
    if not propagators:
        raise ValueError("sigma(t) needs at least one propagator series")
    gram = dipole_gram(dipoles)
    if gram.shape[0] != propagators[0].n_sites:
        raise ValueError(
            f"{gram.shape[0]} dipoles for {propagators[0].n_sites} sites"
        )
    stacked = np.stack([np.asarray(p.matrices) for p in propagators])
    return sigma_from_propagators(stacked, gram).mean(axis=0)


def _half_cosine_window(n: int) -> np.ndarray:
    return 0.5 * (1 + np.cos(np.pi * np.arange(n) / n))


def absorption_spectrum(
    sigma: np.ndarray,
    dt_fs: float,
    window: bool = False,
    shift_cm1: float = 0.0,
    n_fft: Optional[int] = None,
) -> AbsorptionSpectrum:
    """
    Re sum_j' sigma(t_j) exp(+i w t_j / hbar) dt on the FFT grid.

    ``n_fft`` zero-pads sigma for a finer grid; ``window`` applies a
    raised-cosine decay; ``shift_cm1`` is added to the grid and recorded.
    """
    sigma = np.asarray(sigma, dtype=complex)
    if sigma.ndim != 1 or len(sigma) < 4:
        raise ValueError("Absorption needs a 1-D sigma(t) of at least 4 points")
    if dt_fs <= 0:
        raise ValueError(f"Time step must be positive, got {dt_fs}")
    samples = sigma.copy()
    if window:
        samples *= _half_cosine_window(len(samples))
    samples[0] *= 0.5
    size = len(samples) if n_fft is None else int(n_fft)
    if size < len(samples):
        raise ValueError(f"n_fft = {size} is shorter than sigma ({len(samples)})")

    transformed = np.fft.ifft(samples, n=size) * size * dt_fs
    omega = np.fft.fftshift(units.fft_angular_grid(size, dt_fs))
    intensity = np.fft.fftshift(transformed.real)
    return AbsorptionSpectrum(
        omega_cm1=omega + shift_cm1, intensity=intensity, shift_cm1=shift_cm1
    )


def normalize_peak(spectrum: AbsorptionSpectrum) -> AbsorptionSpectrum:
    peak = float(np.max(spectrum.intensity))
    if peak <= 0:
        raise ValueError("Cannot normalise a spectrum without a positive peak")
    return spectrum.model_copy(
        update={
            "intensity": _readonly(spectrum.intensity / peak),
            "normalization": "peak",
        }
    )


def apply_shift(spectrum: AbsorptionSpectrum, shift_cm1: float) -> AbsorptionSpectrum:
    return spectrum.model_copy(
        update={
            "omega_cm1": _readonly(spectrum.omega_cm1 + shift_cm1),
            "shift_cm1": spectrum.shift_cm1 + shift_cm1,
        }
    )


def _readonly(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float)
    values.flags.writeable = False
    return values


def align_shift(
    spectrum: AbsorptionSpectrum,
    reference: AbsorptionSpectrum,
    omega_range: Optional[Tuple[float, float]] = None,
    max_shift_bins: Optional[int] = None,
) -> float:
    """
    Integer-bin shift (cm^-1) that, added to ``spectrum``, maximises its
    inner product with ``reference`` within ``omega_range``.
    """
    grid = np.asarray(reference.omega_cm1)
    lower = max(grid[0], spectrum.omega_cm1[0])
    upper = min(grid[-1], spectrum.omega_cm1[-1])
    if omega_range is not None:
        lower, upper = max(lower, omega_range[0]), min(upper, omega_range[1])
    mask = (grid >= lower) & (grid <= upper)
    if upper < lower or not np.any(mask):
        raise ValueError("Spectra do not overlap in the requested range")

    values = np.interp(
        grid, spectrum.omega_cm1, spectrum.intensity, left=0.0, right=0.0
    )
    target = np.asarray(reference.intensity)
    limit = len(grid) // 4 if max_shift_bins is None else int(max_shift_bins)

    best_bins, best_score = 0, -np.inf
    for bins in sorted(range(-limit, limit + 1), key=abs):
        moved = np.zeros_like(values)
        if bins > 0:
            moved[bins:] = values[:-bins]
        elif bins < 0:
            moved[:bins] = values[-bins:]
        else:
            moved = values
        score = float(np.dot(moved[mask], target[mask]))
        if score > best_score:
            best_bins, best_score = bins, score

    shift = best_bins * reference.bin_width_cm1
    logger.debug("Aligned spectra by %d bins (%.3f cm^-1)", best_bins, shift)
    return shift


def populations(series: EnsembleDensitySeries) -> np.ndarray:
    """Site populations rho_nn(t), shape (n_times, N)."""
    return np.diagonal(series.matrices, axis1=1, axis2=2).real.copy()


def population_mse(pops: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error against target populations, broadcast over time."""
    target = np.asarray(target, dtype=float)
    return float(np.mean((np.asarray(pops, dtype=float) - target) ** 2))


def sum_sites(pops: np.ndarray, groups: Sequence[Sequence[int]]) -> np.ndarray:
    """Columns of summed populations, one per group of 0-based site indices."""
    pops = np.asarray(pops, dtype=float)
    return np.stack([pops[:, list(group)].sum(axis=1) for group in groups], axis=1)
