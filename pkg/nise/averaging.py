"""
Modified ensemble averaging.

The constructed density is the normalised exponential of the realization
mean of ln(rho), which targets the Boltzmann state of the mean Hamiltonian.
Populations are blended from the thermalised average towards the
constructed one with a lifetime-dependent weight.
"""
import logging
import warnings
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from . import units
from .errors import NumericalWarning
from .models import AveragingKind, EnsembleDensitySeries, LifetimeSet
from .propagation import eigh_batch, hermitize

logger = logging.getLogger(__name__)

EIGENVALUE_FLOOR = 1e-10
INTERPOLATION_FACTOR = 5.0


def _check_hermitian(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape[-1] != rho.shape[-2]:
        raise ValueError("Density matrix must be square")
    scale = max(1.0, float(np.max(np.abs(rho), initial=0.0)))
    asymmetry = np.abs(rho - np.conj(np.swapaxes(rho, -1, -2)))
    if np.max(asymmetry, initial=0.0) > 1e-8 * scale:
        raise ValueError("Density matrix must be Hermitian")
    return rho


def _apply_to_eigenvalues(matrix: np.ndarray, function) -> np.ndarray:
    values, vectors = np.linalg.eigh(matrix)
    mapped = function(values)
    return (vectors * mapped[..., None, :]) @ np.conj(np.swapaxes(vectors, -1, -2))


def density_log(rho, floor: float = EIGENVALUE_FLOOR) -> np.ndarray:
    """ln(rho) through the eigenbasis, eigenvalues clamped below at ``floor``."""
    rho = _check_hermitian(rho)
    return _apply_to_eigenvalues(rho, lambda w: np.log(np.maximum(w, floor)))


def _normalized_exp(log_mean: np.ndarray) -> np.ndarray:
    # shifting by the largest eigenvalue cancels in the trace normalisation
    def stable_exp(values):
        return np.exp(values - values.max(axis=-1, keepdims=True))

    rho = _apply_to_eigenvalues(hermitize(log_mean), stable_exp)
    trace = np.asarray(np.trace(rho, axis1=-2, axis2=-1).real)
    return hermitize(rho / trace[..., None, None])


def constructed_density(
    densities: Union[Sequence[np.ndarray], np.ndarray], floor: float = EIGENVALUE_FLOOR
) -> np.ndarray:
    """rho_c = exp(<ln rho_r>) / Tr exp(<ln rho_r>) over realizations r."""
    stacked = np.asarray(densities, dtype=complex)
    if stacked.ndim == 2:
        stacked = stacked[None]
    if stacked.shape[0] == 0:
        raise ValueError("Constructed density needs at least one realization")
    return _normalized_exp(density_log(stacked, floor).mean(axis=0))


def constructed_from_pure_mean(
    mean_density: np.ndarray, floor: float = EIGENVALUE_FLOOR
) -> np.ndarray:
    """
    Constructed density when every realization is a pure state.

    For a projector P, ln(P) clamped at ``floor`` is ln(floor) (I - P), so the
    realization mean of the logs only needs the plain mean density. Accepts a
    single matrix or a time series (..., N, N).
    """
    rho = np.asarray(mean_density, dtype=complex)
    identity = np.eye(rho.shape[-1])
    return _normalized_exp(np.log(floor) * (identity - rho))


def constructed_series(
    mean_density: EnsembleDensitySeries, floor: float = EIGENVALUE_FLOOR
) -> EnsembleDensitySeries:
    return EnsembleDensitySeries(
        matrices=constructed_from_pure_mean(mean_density.matrices, floor),
        dt_fs=mean_density.dt_fs,
        averaging=AveragingKind.CONSTRUCTED,
    )


def _decay(t, p_inf, tau, p0):
    return p_inf + (p0 - p_inf) * np.exp(-t / tau)


def fit_lifetimes(
    populations: Union[EnsembleDensitySeries, np.ndarray], dt_fs: Optional[float] = None
) -> LifetimeSet:
    """
    Fit P_n(t) = P_inf + (P_n(0) - P_inf) exp(-t / tau_n) per site.

    Fits that fail, or give tau outside [dt, 100 t_max], fall back to
    tau = t_max and are flagged.
    """
    if isinstance(populations, EnsembleDensitySeries):
        dt_fs = populations.dt_fs
        values = np.diagonal(populations.matrices, axis1=1, axis2=2).real
    else:
        values = np.asarray(populations, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
    if dt_fs is None or dt_fs <= 0:
        raise ValueError("Lifetime fit needs a positive time step")
    n_times, n_sites = values.shape
    if n_times < 10:
        raise ValueError(f"Lifetime fit needs at least 10 points, got {n_times}")

    times = np.arange(n_times) * dt_fs
    t_max = float(times[-1])
    taus = np.full(n_sites, t_max)
    quality = np.zeros(n_sites)
    fallback = np.zeros(n_sites, dtype=bool)
    tail = max(1, n_times // 10)

    for n in range(n_sites):
        curve = values[:, n]
        p0 = float(curve[0])
        p_inf = float(curve[-tail:].mean())
        fitted = _fit_one(times, curve, p0, p_inf, t_max)
        if fitted is None or not dt_fs <= fitted[0] <= 100 * t_max:
            fallback[n] = True
            quality[n] = float(np.sqrt(np.mean((curve - curve.mean()) ** 2)))
            continue
        taus[n], quality[n] = fitted

    if np.any(fallback):
        warnings.warn(
            f"Lifetime fit fell back to t_max = {t_max} fs for sites "
            f"{(np.nonzero(fallback)[0] + 1).tolist()}",
            NumericalWarning,
            stacklevel=2,
        )
    logger.info("Fitted lifetimes (fs): %s", np.round(taus, 1).tolist())
    return LifetimeSet(taus_fs=taus, quality=quality, fallback=fallback)


def _fit_one(times, curve, p0, p_inf, t_max):
    if np.ptp(curve) < 1e-8:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("error", OptimizeWarning)
        try:
            params, _ = curve_fit(
                lambda t, p, tau: _decay(t, p, tau, p0),
                times,
                curve,
                p0=[p_inf, t_max / 5.0],
                maxfev=5000,
            )
        except (RuntimeError, OptimizeWarning, ValueError):
            return None
    tau = float(params[1])
    if not np.isfinite(tau):
        return None
    residual = curve - _decay(times, params[0], tau, p0)
    rms = float(np.sqrt(np.mean(residual**2)))
    return tau, rms


def interpolation_weight(times_fs, taus_fs, factor: float = INTERPOLATION_FACTOR):
    """w_n(t) = 1 - exp(-t / (factor tau_n)); shape (T, N) for arrays."""
    taus = np.asarray(taus_fs, dtype=float)
    if np.any(taus <= 0):
        raise ValueError("Lifetimes must be positive")
    if factor <= 0:
        raise ValueError(f"Interpolation factor must be positive, got {factor}")
    t = np.asarray(times_fs, dtype=float)
    return 1.0 - np.exp(-np.multiply.outer(t, 1.0 / (factor * taus)))


def interpolated_populations(
    thermalised: EnsembleDensitySeries,
    constructed: EnsembleDensitySeries,
    lifetimes: LifetimeSet,
    factor: float = INTERPOLATION_FACTOR,
    weights: Optional[np.ndarray] = None,
) -> EnsembleDensitySeries:
    """
    P_n = w_n P^c_nn + (1 - w_n) P^T_nn, renormalised to sum 1.

    Coherences are copied from the thermalised series without interpolation.
    """
    if thermalised.matrices.shape != constructed.matrices.shape:
        raise ValueError("Thermalised and constructed series differ in shape")
    if not np.isclose(thermalised.dt_fs, constructed.dt_fs):
        raise ValueError("Thermalised and constructed series differ in time step")
    if len(lifetimes.taus_fs) != thermalised.n_sites:
        raise ValueError("Need one lifetime per site")
    if weights is None:
        weights = interpolation_weight(thermalised.times_fs, lifetimes.taus_fs, factor)
    weights = np.broadcast_to(weights, (thermalised.n_times, thermalised.n_sites))

    diag_t = np.diagonal(thermalised.matrices, axis1=1, axis2=2).real
    diag_c = np.diagonal(constructed.matrices, axis1=1, axis2=2).real
    blended = weights * diag_c + (1.0 - weights) * diag_t
    blended = blended / blended.sum(axis=1, keepdims=True)

    matrices = np.array(thermalised.matrices, dtype=complex)
    sites = np.arange(thermalised.n_sites)
    matrices[:, sites, sites] = blended
    return EnsembleDensitySeries(
        matrices=matrices, dt_fs=thermalised.dt_fs, averaging=AveragingKind.INTERPOLATED
    )


def mean_boltzmann_density(
    hamiltonian, noise: np.ndarray, temperature: float
) -> np.ndarray:
    """
    Realization and time average of the Boltzmann state of each H_eff(t).

    This is the arithmetic mean that the constructed density avoids; it
    differs from the Boltzmann state of the mean Hamiltonian.
    """
    kt = units.thermal_energy(temperature)
    matrix = np.asarray(getattr(hamiltonian, "matrix", hamiltonian), dtype=float)
    samples = np.asarray(noise, dtype=float).reshape(-1, matrix.shape[0])
    sites = np.arange(matrix.shape[0])
    effective = np.broadcast_to(matrix, (len(samples),) + matrix.shape).copy()
    effective[:, sites, sites] += samples
    energies, vectors = eigh_batch(effective)
    weights = np.exp(-(energies - energies.min(axis=1, keepdims=True)) / kt)
    weights /= weights.sum(axis=1, keepdims=True)
    states = (vectors * weights[:, None, :]) @ np.swapaxes(vectors, 1, 2)
    return hermitize(states.mean(axis=0))
