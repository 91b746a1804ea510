"""
Spectral densities: evaluation, reorganisation energy and rescaling.

Drude-Lorentz sums follow

    J(w) = 1/pi * sum_k [ nu_k lambda_k w / (nu_k^2 + (w - Omega_k)^2)
                        + nu_k lambda_k w / (nu_k^2 + (w + Omega_k)^2) ]

with every quantity in cm^-1. Tabulated curves are linearly interpolated and
vanish outside their grid.
"""
import hashlib
import json
import logging
from typing import Union

import numpy as np
from scipy.integrate import quad

from .models import DrudeLorentzPeak, SpectralDensityModel

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def drude_lorentz(*peaks: DrudeLorentzPeak) -> SpectralDensityModel:
    return SpectralDensityModel(peaks=tuple(peaks))


def tabulated(omega_cm1, values_cm1, slope_at_zero=None) -> SpectralDensityModel:
    return SpectralDensityModel(
        omega_cm1=omega_cm1, values_cm1=values_cm1, slope_at_zero=slope_at_zero
    )


def _check_frequencies(omega: ArrayLike) -> np.ndarray:
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("Spectral density is only defined for omega >= 0")
    return w


def _peak_terms(model: SpectralDensityModel, w: np.ndarray) -> np.ndarray:
    total = np.zeros_like(w)
    for peak in model.peaks:
        nu, lam, center = peak.width_cm1, peak.reorg_cm1, peak.center_cm1
        total += nu * lam / (nu**2 + (w - center) ** 2)
        total += nu * lam / (nu**2 + (w + center) ** 2)
    return total / np.pi


def eval_sd(model: SpectralDensityModel, omega: ArrayLike) -> ArrayLike:
    """J(omega) in cm^-1. Scalars in, scalars out."""
    w = _check_frequencies(omega)
    if model.is_tabulated:
        values = np.interp(
            w, model.omega_cm1, model.values_cm1, left=0.0, right=0.0
        )
    else:
        values = w * _peak_terms(model, w)
    return float(values) if np.ndim(omega) == 0 else values


def j_over_omega(model: SpectralDensityModel, omega: ArrayLike) -> np.ndarray:
    """
    J(omega)/omega including its limit at omega = 0.

    The analytic limit is used for Drude-Lorentz sums. Tabulated curves use
    ``slope_at_zero`` when present, otherwise a linear extrapolation from the
    two smallest positive grid points.
    """
    w = _check_frequencies(omega)
    w = np.atleast_1d(w)
    if not model.is_tabulated:
        result = _peak_terms(model, w)
    else:
        result = np.zeros_like(w)
        positive = w > 0
        result[positive] = eval_sd(model, w[positive]) / w[positive]
        result[~positive] = _tabulated_zero_limit(model)
    if not np.all(np.isfinite(result)):
        raise ValueError("J(omega)/omega diverges at omega = 0")
    return result


def _tabulated_zero_limit(model: SpectralDensityModel) -> float:
    if model.slope_at_zero is not None:
        return float(model.slope_at_zero)
    grid, values = model.omega_cm1, model.values_cm1
    positive = grid > 0
    w, j = grid[positive], values[positive]
    if grid[0] > 0:
        # zero extension below the first sample
        return 0.0
    if len(w) == 1:
        return float(j[0] / w[0])
    g1, g2 = j[0] / w[0], j[1] / w[1]
    limit = g1 - w[0] * (g2 - g1) / (w[1] - w[0])
    return float(max(limit, 0.0))


def reorganization_energy(
    model: SpectralDensityModel, numerical: bool = False
) -> float:
    """
    lambda = int_0^inf J(w)/w dw in cm^-1.

    Drude-Lorentz sums return sum(lambda_k) unless ``numerical`` is set, in
    which case the integral is evaluated by adaptive quadrature.
    """
    if model.is_tabulated:
        return _tabulated_reorganization(model)
    if not numerical:
        return float(sum(peak.reorg_cm1 for peak in model.peaks))
    if not model.peaks:
        return 0.0

    def integrand(w):
        return float(_peak_terms(model, np.array([w]))[0])

    widest = max(peak.width_cm1 for peak in model.peaks)
    upper = max(peak.center_cm1 for peak in model.peaks) + 50.0 * widest
    breakpoints = sorted(
        {p.center_cm1 for p in model.peaks if 0 < p.center_cm1 < upper}
    )
    body, _ = quad(integrand, 0.0, upper, points=breakpoints or None, limit=500)
    tail, _ = quad(integrand, upper, np.inf, limit=200)
    return body + tail


def _tabulated_reorganization(model: SpectralDensityModel) -> float:
    # J is piecewise linear, so J/w integrates in closed form on each segment
    w, j = model.omega_cm1, model.values_cm1
    w1, w2, j1, j2 = w[:-1], w[1:], j[:-1], j[1:]
    slope = (j2 - j1) / (w2 - w1)
    offset = j1 - slope * w1
    total = np.sum(slope * (w2 - w1))
    from_zero = w1 == 0
    if np.any(from_zero & (np.abs(offset) > 0)):
        raise ValueError("J(omega)/omega is not integrable at omega = 0")
    log_terms = offset[~from_zero] * np.log(w2[~from_zero] / w1[~from_zero])
    total += np.sum(log_terms)
    if not np.isfinite(total):
        raise ValueError("J(omega)/omega is not integrable at omega = 0")
    return float(total)


def rescale_to_lambda(
    model: SpectralDensityModel, lambda_target: float
) -> SpectralDensityModel:
    """Scale J by one factor so its reorganisation energy becomes lambda_target."""
    if lambda_target < 0:
        raise ValueError(
            f"Target reorganization energy must be >= 0, got {lambda_target}"
        )
    current = reorganization_energy(model)
    if current <= 0:
        raise ValueError("Cannot rescale a spectral density with zero weight")
    factor = lambda_target / current
    logger.debug("Rescaling spectral density by %.6g", factor)

    if not model.is_tabulated:
        return SpectralDensityModel(
            peaks=tuple(
                peak.model_copy(update={"reorg_cm1": peak.reorg_cm1 * factor})
                for peak in model.peaks
            )
        )
    slope = None if model.slope_at_zero is None else model.slope_at_zero * factor
    return SpectralDensityModel(
        omega_cm1=model.omega_cm1,
        values_cm1=model.values_cm1 * factor,
        slope_at_zero=slope,
    )


def fingerprint(model: SpectralDensityModel) -> str:
    """Short SHA-256 of the model's parameters, for file metadata."""
    digest = hashlib.sha256()
    if model.is_tabulated:
        digest.update(np.ascontiguousarray(model.omega_cm1).tobytes())
        digest.update(np.ascontiguousarray(model.values_cm1).tobytes())
        digest.update(repr(model.slope_at_zero).encode())
    else:
        payload = [peak.model_dump() for peak in model.peaks]
        digest.update(json.dumps(payload, sort_keys=True).encode())
    return digest.hexdigest()[:16]


def max_frequency(model: SpectralDensityModel, fraction: float = 0.05) -> float:
    """
    Smallest frequency above which J stays below ``fraction`` of its peak.

    Used to warn when the noise time step cannot resolve the bath.
    """
    if model.is_tabulated:
        grid = model.omega_cm1
    else:
        top = max((p.center_cm1 + 100 * p.width_cm1 for p in model.peaks), default=1.0)
        grid = np.linspace(0.0, top, 20001)
    values = eval_sd(model, grid)
    peak = np.max(values, initial=0.0)
    if peak <= 0:
        return 0.0
    above = np.nonzero(values >= fraction * peak)[0]
    return float(grid[above[-1]])
