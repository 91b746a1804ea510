"""
Super-resolution fit of an autocorrelation onto damped cosines

    C(t_k) ~ sum_ij lambda_ij exp(-gamma_i t_k / hbar) cos(Omega_j t_k / hbar)

by minimising

    a ||A lambda - C||_2 + b ||lambda||_1 + c sum(|lambda| - lambda)

followed by a non-negative least-squares refit on the retained modes.
"""
import logging
import warnings
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize, nnls

from . import units
from .errors import NumericalError, NumericalWarning
from .models import (
    AutocorrelationSeries,
    SpectralDensityModel,
    SuperResGrid,
    SuperResSolution,
)

logger = logging.getLogger(__name__)

MAX_EXPONENT = 700.0
DEBIAS_THRESHOLD = 5e-8


def _factors(grid: SuperResGrid, lags_fs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    t = np.asarray(lags_fs, dtype=float) / units.HBAR
    decay = np.exp(-np.minimum(np.outer(grid.gammas_cm1, t), MAX_EXPONENT))
    oscillation = np.cos(np.outer(grid.omegas_cm1, t))
    return decay, oscillation


def design_matrix(grid: SuperResGrid, lags_fs) -> np.ndarray:
    """
    A_ijk = exp(-gamma_i t_k / hbar) cos(Omega_j t_k / hbar).

    Shape (n_gamma, n_omega, n_lags); gamma t is clamped to keep exp finite.
    """
    lags = np.atleast_1d(np.asarray(lags_fs, dtype=float))
    if len(lags) == 0:
        raise ValueError("Design matrix needs at least one lag")
    decay, oscillation = _factors(grid, lags)
    return decay[:, None, :] * oscillation[None, :, :]


class DesignOperator:
    """Matrix-free products with the design matrix, using its separable form."""

    def __init__(self, grid: SuperResGrid, lags_fs: np.ndarray):
        self.decay, self.oscillation = _factors(grid, lags_fs)
        self.shape = grid.shape

    def matvec(self, coefficients: np.ndarray) -> np.ndarray:
        return np.sum(self.decay * (coefficients @ self.oscillation), axis=0)

    def rmatvec(self, residual: np.ndarray) -> np.ndarray:
        return (self.decay * residual[None, :]) @ self.oscillation.T

    def columns(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return (self.decay[rows] * self.oscillation[cols]).T


def _fitted_lags(series: AutocorrelationSeries, cutoff_fs: Optional[float]):
    times = series.times_fs
    cutoff = float(times[-1]) if cutoff_fs is None else float(cutoff_fs)
    if cutoff <= 0:
        raise ValueError(f"Cutoff must be positive, got {cutoff}")
    keep = times <= cutoff + 1e-9
    return times[keep], np.asarray(series.values[keep], dtype=float), cutoff


def _objective(operator, target, a, b, c, smoothing):
    size = operator.shape[0] * operator.shape[1]

    def evaluate(x):
        positive, negative = x[:size], x[size:]
        coefficients = (positive - negative).reshape(operator.shape)
        residual = operator.matvec(coefficients) - target
        norm = np.sqrt(residual @ residual + smoothing**2)
        value = a * norm + b * np.sum(x) + 2 * c * np.sum(negative)
        pull = (a / norm) * operator.rmatvec(residual).ravel()
        gradient = np.concatenate([pull + b, -pull + b + 2 * c])
        return value, gradient

    return evaluate


def objective_value(coefficients, operator, target, a, b, c) -> float:
    """The unsmoothed objective for coefficients on the grid."""
    residual = operator.matvec(coefficients) - target
    magnitude = np.abs(coefficients)
    return float(
        a * np.linalg.norm(residual)
        + b * magnitude.sum()
        + c * (magnitude - coefficients).sum()
    )


def fit(
    series: AutocorrelationSeries,
    grid: SuperResGrid,
    a: float = 1e4,
    b: float = 1.0,
    c: float = 0.1,
    cutoff_fs: Optional[float] = None,
    restarts: int = 3,
    seed: int = 0,
    max_iterations: int = 15000,
) -> SuperResSolution:
    """
    Minimise the sparse objective over lags t <= cutoff_fs.

    The coefficients are split into non-negative parts lambda = p - n and the
    smoothed problem is solved with L-BFGS-B from a zero start plus
    ``restarts`` random starts; the lowest objective wins.
    """
    lags, target, cutoff = _fitted_lags(series, cutoff_fs)
    if not np.all(np.isfinite(target)):
        raise ValueError("Autocorrelation contains non-finite values")
    operator = DesignOperator(grid, lags)
    size = grid.shape[0] * grid.shape[1]

    # the objective is positively homogeneous, so fit on a unit scale
    scale = float(np.max(np.abs(target), initial=0.0))
    if scale == 0.0:
        zero = np.zeros(grid.shape)
        return SuperResSolution(
            grid=grid, coefficients=zero, a=a, b=b, c=c, cutoff_fs=cutoff
        )
    evaluate = _objective(operator, target / scale, a, b, c, smoothing=1e-9)

    rng = np.random.default_rng(seed)
    starts = [np.zeros(2 * size)]
    starts += [rng.uniform(0.0, 1.0 / size, 2 * size) for _ in range(restarts)]

    best, best_history = None, ()
    for index, start in enumerate(starts):
        history = []
        result = minimize(
            evaluate,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=[(0.0, None)] * (2 * size),
            callback=lambda x: history.append(float(evaluate(x)[0])),
            options={"maxiter": max_iterations, "maxfun": 2 * max_iterations},
        )
        if not np.isfinite(result.fun):
            raise NumericalError("Super-resolution objective became non-finite")
        logger.debug(
            "Start %d: objective %.6g after %d iterations (%s)",
            index,
            result.fun,
            result.nit,
            result.message,
        )
        if best is None or result.fun < best.fun:
            best, best_history = result, tuple(h * scale for h in history)

    coefficients = (best.x[:size] - best.x[size:]).reshape(grid.shape) * scale
    residual = operator.matvec(coefficients) - target
    logger.info(
        "Super-resolution fit: %d non-zero modes, residual %.3g",
        np.count_nonzero(coefficients),
        np.linalg.norm(residual),
    )
    return SuperResSolution(
        grid=grid,
        coefficients=coefficients,
        a=a,
        b=b,
        c=c,
        cutoff_fs=cutoff,
        objective=objective_value(coefficients, operator, target, a, b, c),
        residual_norm=float(np.linalg.norm(residual)),
        history=best_history,
    )


def debias(
    solution: SuperResSolution,
    series: AutocorrelationSeries,
    threshold: float = DEBIAS_THRESHOLD,
) -> SuperResSolution:
    """Keep modes with |lambda| > threshold and refit them by NNLS."""
    lags, target, _ = _fitted_lags(series, solution.cutoff_fs)
    rows, cols = np.nonzero(np.abs(solution.coefficients) > threshold)
    coefficients = np.zeros(solution.grid.shape)
    operator = DesignOperator(solution.grid, lags)

    if len(rows) == 0:
        warnings.warn(
            f"No super-resolution mode exceeds the threshold {threshold:g}; "
            "returning an empty solution",
            NumericalWarning,
            stacklevel=2,
        )
    else:
        scale = float(np.max(np.abs(target), initial=0.0)) or 1.0
        columns = operator.columns(rows, cols)
        refit, _ = nnls(columns, target / scale, maxiter=50 * len(rows))
        coefficients[rows, cols] = refit * scale
        logger.info("Debiased %d retained modes", len(rows))

    residual = operator.matvec(coefficients) - target
    return solution.model_copy(
        update={
            "coefficients": _readonly(coefficients),
            "threshold": threshold,
            "debiased": True,
            "residual_norm": float(np.linalg.norm(residual)),
            "objective": objective_value(
                coefficients, operator, target, solution.a, solution.b, solution.c
            ),
        }
    )


def _readonly(values: np.ndarray) -> np.ndarray:
    values.flags.writeable = False
    return values


def lorentzian_sum(solution: SuperResSolution, omega: np.ndarray) -> np.ndarray:
    """sum_ij lambda_ij [g_i/(g_i^2 + (w + W_j)^2) + g_i/(g_i^2 + (w - W_j)^2)]."""
    rows, cols = np.nonzero(solution.coefficients)
    gamma = solution.grid.gammas_cm1[rows][:, None]
    center = solution.grid.omegas_cm1[cols][:, None]
    weight = solution.coefficients[rows, cols][:, None]
    w = np.asarray(omega, dtype=float)[None, :]
    terms = gamma / (gamma**2 + (w + center) ** 2)
    terms += gamma / (gamma**2 + (w - center) ** 2)
    return np.sum(weight * terms, axis=0)


def reconstruct_sd(
    solution: SuperResSolution, omega_cm1, temperature: float
) -> SpectralDensityModel:
    """
    Tabulated J(w) = beta w / (2 pi) * lorentzian_sum(w).

    Each damped cosine transforms as int_0^inf C(t) cos(w t / hbar) dt =
    hbar / 2 * lorentzian_sum(w), and inverting
    C(t) = (2 / beta) int_0^inf J(w) / w cos(w t / hbar) dw gives
    J(w) = beta w / (pi hbar) * hbar / 2 * lorentzian_sum(w), where the hbar
    cancels. With lambda_ij in cm^-2, gamma, Omega and w in cm^-1 and
    beta = 1 / k_B T in cm, lorentzian_sum is in cm^-1 and so is J. This matches
    ``bath.sd_from_autocorrelation`` on the fitted C(t).
    """
    kt = units.thermal_energy(temperature)
    omega = np.asarray(omega_cm1, dtype=float)
    values = omega * lorentzian_sum(solution, omega) / (2 * np.pi * kt)
    if np.any(values < 0):
        logger.debug("Clipping negative reconstructed J; solution is not debiased")
        values = np.clip(values, 0.0, None)
    slope = float(lorentzian_sum(solution, np.zeros(1))[0] / (2 * np.pi * kt))
    return SpectralDensityModel(
        omega_cm1=omega, values_cm1=values, slope_at_zero=max(slope, 0.0)
    )
