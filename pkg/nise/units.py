"""
Physical constants and unit conversions.

Internal units: energies and angular frequencies in cm^-1, times in fs,
temperatures in K.
"""
import numpy as np

HBAR = 5308.8  # cm^-1 * fs
K_B = 0.695035  # cm^-1 / K
EV_TO_CM1 = 8065.54

# J_CL = (pi / hbar) * J when switching to the Caldeira-Leggett normalisation.
CALDEIRA_LEGGETT_FACTOR = np.pi / HBAR


def thermal_energy(temperature: float) -> float:
    """k_B T in cm^-1."""
    if temperature <= 0:
        raise ValueError(f"Temperature must be positive, got {temperature}")
    return K_B * temperature


def width_from_time(tau_fs: float) -> float:
    """Lorentzian half-width nu = hbar / tau for a width quoted as a time."""
    if tau_fs <= 0:
        raise ValueError(f"Width time must be positive, got {tau_fs}")
    return HBAR / tau_fs


def nyquist_frequency(dt_fs: float) -> float:
    """Largest resolvable angular frequency pi / dt, in cm^-1."""
    if dt_fs <= 0:
        raise ValueError(f"Time step must be positive, got {dt_fs}")
    return np.pi * HBAR / dt_fs


def max_time_step(omega_max_cm1: float) -> float:
    """Largest time step (fs) whose Nyquist frequency still covers omega_max."""
    if omega_max_cm1 <= 0:
        raise ValueError(f"Frequency must be positive, got {omega_max_cm1}")
    return np.pi * HBAR / omega_max_cm1


def fft_angular_grid(n_points: int, dt_fs: float) -> np.ndarray:
    """Two-sided FFT angular frequencies in cm^-1 (numpy ordering)."""
    return 2 * np.pi * HBAR * np.fft.fftfreq(n_points, d=dt_fs)
