"""
Bath analysis: autocorrelations, damping, cutoff detection, the cosine
transform pair between C(t) and J(w), resampling and error metrics.

Cosine transform pair on a series of n lags (M = 2(n - 1)):

    w_k  = 2 pi hbar k / (M dt)
    J(w) = w dt / (2 pi hbar k_B T) * Re FFT(C_ext)
    C(t) = (2 pi hbar k_B T / dt) * Re IFFT((J/w)_ext)

where ``_ext`` is the symmetric extension without the end points repeated.
"""
import logging
import warnings
from typing import Iterable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import spectral, units
from .errors import NumericalWarning
from .models import (
    AutocorrelationSeries,
    DampingKind,
    DampingSpec,
    NoiseTrajectory,
    Provenance,
    SpectralDensityModel,
)

logger = logging.getLogger(__name__)

MAE_WINDOW_FS = 20000.0
# negative J below this fraction of max |J| is round-off, not ringing
NEGATIVE_TOLERANCE = 1e-6


class CutoffSuggestion(NamedTuple):
    cutoff_fs: float
    found: bool


def autocorrelation(
    trajectory: NoiseTrajectory, site: int = 0, method: str = "fft"
) -> AutocorrelationSeries:
    """
    Mean-subtracted estimator C(t_j) = 1/(N-j) sum_i dE(t_i + t_j) dE(t_i).

    Only lags j < N/2 are returned.
    """
    x = np.asarray(trajectory.values[:, site], dtype=float)
    n = len(x)
    if n < 4:
        raise ValueError(f"Autocorrelation needs at least 4 samples, got {n}")
    x = x - x.mean()
    n_lags = (n + 1) // 2

    if method == "fft":
        spectrum = np.fft.rfft(x, 2 * n)
        sums = np.fft.irfft(spectrum * np.conj(spectrum), 2 * n)[:n_lags]
    elif method == "direct":
        sums = np.array([np.dot(x[j:], x[: n - j]) for j in range(n_lags)])
    else:
        raise ValueError(f"Unknown autocorrelation method '{method}'")

    values = sums / (n - np.arange(n_lags))
    return AutocorrelationSeries(
        values=values, dt_fs=trajectory.dt_fs, provenance=Provenance.ESTIMATED
    )


def average_autocorrelations(
    series: Sequence[AutocorrelationSeries],
) -> AutocorrelationSeries:
    if not series:
        raise ValueError("Cannot average an empty list of autocorrelations")
    first = series[0]
    for other in series[1:]:
        if len(other.values) != len(first.values):
            raise ValueError("Autocorrelations differ in length")
        if not np.isclose(other.dt_fs, first.dt_fs):
            raise ValueError("Autocorrelations differ in time step")
    values = np.mean([s.values for s in series], axis=0)
    return AutocorrelationSeries(
        values=values, dt_fs=first.dt_fs, provenance=first.provenance
    )


def damping_factor(times_fs: np.ndarray, spec: DampingSpec) -> np.ndarray:
    t = np.asarray(times_fs, dtype=float)
    if spec.kind == DampingKind.STEP:
        return (t <= spec.cutoff_fs).astype(float)
    return np.exp(-((t / spec.cutoff_fs) ** spec.b))


def apply_damping(
    series: AutocorrelationSeries, spec: DampingSpec
) -> AutocorrelationSeries:
    values = series.values * damping_factor(series.times_fs, spec)
    return series.model_copy(update={"values": _readonly(values)})


def suggest_cutoff(
    series: AutocorrelationSeries,
    window_fs: float = 500.0,
    floor_fraction: float = 0.25,
    threshold: float = 2.0,
) -> CutoffSuggestion:
    """
    Earliest lag after which the running mean of |C| stays within
    ``threshold`` times the noise floor.

    The running mean looks ``window_fs`` ahead of each lag. The floor is the
    mean of |C| over the last ``floor_fraction`` of the lags. The cutoff is
    the start of the first run of lags, one window long, whose running mean
    sits at or below the threshold, so a late excursion of the noise does
    not move it. When C(0) is already at the floor, or the first such run
    does not settle a full window before the tail, no plateau was found and
    half the series length is returned with ``found=False``.
    """
    length = len(series.values)
    window = max(1, int(round(window_fs / series.dt_fs)))
    if length <= window:
        raise ValueError(
            f"Autocorrelation of {length} lags is shorter than the "
            f"{window_fs} fs averaging window"
        )
    # only lags with a full window ahead of them
    magnitude = pd.Series(np.abs(series.values[::-1]))
    ahead = magnitude.rolling(window).mean().to_numpy()[::-1][: length - window + 1]

    tail_start = int(length * (1.0 - floor_fraction))
    floor = float(np.mean(np.abs(series.values[tail_start:])))
    level = threshold * floor
    start = None
    if floor > 0.0 and abs(series.values[0]) > level:
        sustain = min(window, len(ahead))
        below = pd.Series((ahead <= level).astype(float))
        settled = np.nonzero(below.rolling(sustain).min().to_numpy() == 1.0)[0]
        if len(settled):
            start = max(1, int(settled[0]) - sustain + 1)

    if start is None or start + window > tail_start:
        fallback = (length // 2) * series.dt_fs
        warnings.warn(
            f"No noise floor found in the autocorrelation; using t_c = {fallback} fs",
            NumericalWarning,
            stacklevel=2,
        )
        return CutoffSuggestion(cutoff_fs=fallback, found=False)

    cutoff = start * series.dt_fs
    logger.info("Suggested cutoff %.1f fs (floor %.3g)", cutoff, floor)
    return CutoffSuggestion(cutoff_fs=cutoff, found=True)


def _readonly(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float)
    values.flags.writeable = False
    return values


def _symmetric_extension(values: np.ndarray) -> np.ndarray:
    return np.concatenate([values, values[-2:0:-1]])


def transform_grid(n_lags: int, dt_fs: float) -> np.ndarray:
    """Non-negative frequencies (cm^-1) paired with a series of n_lags lags."""
    m = 2 * (n_lags - 1)
    return 2 * np.pi * units.HBAR * np.arange(n_lags) / (m * dt_fs)


def _cosine_transform(series: AutocorrelationSeries, temperature: float):
    kt = units.thermal_energy(temperature)
    n = len(series.values)
    if n < 3:
        raise ValueError(f"Cosine transform needs at least 3 lags, got {n}")
    transformed = np.fft.fft(_symmetric_extension(series.values)).real[:n]
    scale = series.dt_fs / (2 * np.pi * units.HBAR * kt)
    return transform_grid(n, series.dt_fs), scale * transformed


def signed_sd_from_autocorrelation(
    series: AutocorrelationSeries, temperature: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Grid and unclipped J(w) of the cosine transform.

    Truncated or noisy estimates ring below zero; the signed values show
    how much weight the clipped spectral density loses.
    """
    omega, ratio = _cosine_transform(series, temperature)
    return omega, omega * ratio


def sd_from_autocorrelation(
    series: AutocorrelationSeries, temperature: float
) -> SpectralDensityModel:
    """Tabulated J(w) from C(t) by the symmetric-extension cosine transform."""
    omega, ratio = _cosine_transform(series, temperature)
    values = omega * ratio

    negative = values < -NEGATIVE_TOLERANCE * float(np.max(np.abs(values)))
    if np.any(negative):
        lost = -float(np.sum(values[negative])) / float(np.sum(np.abs(values)))
        logger.warning(
            "Clipping %d of %d negative spectral density samples "
            "(%.2g%% of the spectral weight)",
            int(negative.sum()),
            len(values),
            100.0 * lost,
        )
    values = np.clip(values, 0.0, None)
    values[0] = 0.0
    return SpectralDensityModel(
        omega_cm1=omega, values_cm1=values, slope_at_zero=max(float(ratio[0]), 0.0)
    )


def autocorrelation_from_sd(
    model: SpectralDensityModel, temperature: float, dt_fs: float, n_lags: int
) -> AutocorrelationSeries:
    """C(t) = (2/beta) int_0^inf J(w)/w cos(w t / hbar) dw on n_lags lags."""
    kt = units.thermal_energy(temperature)
    if n_lags < 2:
        raise ValueError(f"Need at least 2 lags, got {n_lags}")
    if dt_fs <= 0:
        raise ValueError(f"Time step must be positive, got {dt_fs}")
    ratio = spectral.j_over_omega(model, transform_grid(n_lags, dt_fs))
    values = np.fft.ifft(_symmetric_extension(ratio)).real[:n_lags]
    values *= 2 * np.pi * units.HBAR * kt / dt_fs
    return AutocorrelationSeries(
        values=values, dt_fs=dt_fs, provenance=Provenance.THEORETICAL
    )


def zero_pad(series: AutocorrelationSeries, n_total: int) -> AutocorrelationSeries:
    """Append zero lags up to ``n_total``; finer frequency grid after transforming."""
    if n_total < len(series.values):
        raise ValueError(
            f"Cannot pad {len(series.values)} lags down to {n_total}"
        )
    values = np.zeros(n_total)
    values[: len(series.values)] = series.values
    return series.model_copy(update={"values": _readonly(values)})


def nyquist_check(model: SpectralDensityModel, dt_fs: float) -> bool:
    """False (with a warning) when J has weight above the Nyquist frequency of dt."""
    nyquist = units.nyquist_frequency(dt_fs)
    reach = spectral.max_frequency(model)
    if reach > nyquist:
        warnings.warn(
            f"Spectral density extends to {reach:.0f} cm^-1, beyond the Nyquist "
            f"frequency {nyquist:.0f} cm^-1 of dt = {dt_fs} fs",
            NumericalWarning,
            stacklevel=2,
        )
        return False
    return True


def resample(
    trajectory: NoiseTrajectory,
    dt_target_fs: float,
    taper: bool = False,
    taper_fraction: float = 0.1,
) -> NoiseTrajectory:
    """
    Band-limited upsampling by zero padding in Fourier space.

    Samples at times shared by both grids keep their values. ``taper`` rolls
    the top ``taper_fraction`` of the old band off with a raised cosine.
    """
    dt = trajectory.dt_fs
    if dt_target_fs <= 0:
        raise ValueError(f"Target time step must be positive, got {dt_target_fs}")
    if dt_target_fs > dt * (1 + 1e-12):
        raise ValueError(
            f"Only upsampling is supported (dt = {dt} fs, target {dt_target_fs} fs)"
        )
    n = trajectory.n_steps
    padding = n * (dt / dt_target_fs - 1.0)
    z = int(round(padding))
    if abs(padding - z) > 1e-6 * max(1.0, padding):
        raise ValueError(
            f"dt ratio {dt / dt_target_fs:.9g} does not give an integer padding "
            f"for {n} samples"
        )
    if z == 0:
        return trajectory.model_copy()

    spectrum = np.fft.fft(trajectory.values, axis=0)
    if taper:
        spectrum = spectrum * _taper_weights(n, taper_fraction)[:, None]

    total = n + z
    padded = np.zeros((total, trajectory.n_sites), dtype=complex)
    half = n // 2
    if n % 2:
        half = (n + 1) // 2
        padded[:half] = spectrum[:half]
        padded[total - (n - half) :] = spectrum[half:]
    else:
        # split the Nyquist bin between +/- frequencies
        padded[:half] = spectrum[:half]
        padded[half] = spectrum[half] / 2
        padded[total - half] += spectrum[half] / 2
        padded[total - half + 1 :] = spectrum[half + 1 :]

    values = np.fft.ifft(padded, axis=0).real * (total / n)
    return NoiseTrajectory(
        values=values,
        dt_fs=dt * n / total,
        seed=trajectory.seed,
        realization=trajectory.realization,
    )


def _taper_weights(n: int, fraction: float) -> np.ndarray:
    bins = np.abs(np.fft.fftfreq(n) * n)
    edge = n / 2
    start = (1.0 - fraction) * edge
    weights = np.ones(n)
    rolling = bins > start
    phase = np.pi * (bins[rolling] - start) / (edge - start)
    weights[rolling] = 0.5 * (1 + np.cos(phase))
    return weights


def _overlap(
    grids: Iterable[np.ndarray], bounds: Optional[Tuple[float, float]]
) -> Tuple[float, float]:
    grids = list(grids)
    lower = max(g[0] for g in grids)
    upper = min(g[-1] for g in grids)
    if bounds is not None:
        lower, upper = max(lower, bounds[0]), min(upper, bounds[1])
    if upper < lower:
        raise ValueError("Compared series do not overlap")
    return lower, upper


def mae_sd(
    a: SpectralDensityModel,
    b: SpectralDensityModel,
    omega_range: Optional[Tuple[float, float]] = None,
    n_points: int = 4096,
) -> float:
    """Mean |J_a - J_b| in cm^-1 on the tabulated grid of ``a`` (or ``b``)."""
    tables = [m.omega_cm1 for m in (a, b) if m.is_tabulated]
    if tables:
        lower, upper = _overlap(tables, omega_range)
        grid = tables[0]
        grid = grid[(grid >= lower) & (grid <= upper)]
    else:
        lower, upper = omega_range if omega_range is not None else (0.0, 3000.0)
        grid = np.linspace(lower, upper, n_points)
    if len(grid) == 0:
        raise ValueError("No frequencies in the comparison range")
    return float(np.mean(np.abs(spectral.eval_sd(a, grid) - spectral.eval_sd(b, grid))))


def mae_c(
    a: AutocorrelationSeries,
    b: AutocorrelationSeries,
    t_range: Optional[Tuple[float, float]] = (0.0, MAE_WINDOW_FS),
) -> float:
    """Mean |C_a - C_b| in cm^-2 on the lags of ``a``, first 20 ps by default."""
    lower, upper = _overlap([a.times_fs, b.times_fs], t_range)
    times = a.times_fs
    keep = (times >= lower) & (times <= upper)
    if not np.any(keep):
        raise ValueError("No lags in the comparison range")
    other = np.interp(times[keep], b.times_fs, b.values)
    return float(np.mean(np.abs(a.values[keep] - other)))
