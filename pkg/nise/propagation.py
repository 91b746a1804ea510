"""
NISE and thermalised NISE propagation under H_eff(t) = H + diag(dE(t)).

Per step the wave function is carried in the instantaneous eigenbasis:

    psi~(t_{i+1}) = S_i exp(-i eps(t_i) dt / hbar) psi~(t_i),
    S_i = W(t_{i+1})^T W(t_i)

with eigenvector columns sign-fixed so that diag(S_i) >= 0. The thermalised
variant scales S_i off the diagonal by exp((eps_src - eps_dst) / 4kT) and
renormalises after every step.
"""
import logging
import warnings
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import units
from .errors import NumericalError, NumericalWarning
from .models import (
    AveragingKind,
    EigenFrame,
    EnsembleDensitySeries,
    NoiseTrajectory,
    PropagationMode,
    PropagatorSeries,
    SystemHamiltonian,
    WaveFunction,
)

logger = logging.getLogger(__name__)

DEGENERATE_OVERLAP = 0.5

CouplingModifier = Callable[[np.ndarray, np.ndarray], np.ndarray]
InitialState = Union[int, Sequence[complex], np.ndarray, WaveFunction]


class Overlap(NamedTuple):
    matrix: np.ndarray
    frame: EigenFrame
    degenerate: bool


def _as_matrix(hamiltonian) -> np.ndarray:
    if isinstance(hamiltonian, SystemHamiltonian):
        return np.asarray(hamiltonian.matrix)
    return np.asarray(hamiltonian, dtype=float)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude component of every eigenvector positive."""
    n = vectors.shape[-1]
    largest = np.argmax(np.abs(vectors), axis=-2)
    picked = np.take_along_axis(vectors, largest[..., None, :], axis=-2)
    signs = np.where(picked < 0, -1.0, 1.0)
    return vectors * signs.reshape(vectors.shape[:-2] + (1, n))


def eigh_batch(matrices: np.ndarray):
    """Ascending eigenvalues and sign-fixed eigenvectors of stacked matrices."""
    energies, vectors = np.linalg.eigh(matrices)
    return energies, _fix_signs(vectors)


def eigh(hamiltonian) -> EigenFrame:
    matrix = _as_matrix(hamiltonian)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("Hamiltonian must be a square matrix")
    scale = max(1.0, float(np.max(np.abs(matrix), initial=0.0)))
    if np.max(np.abs(matrix - matrix.T), initial=0.0) > 1e-10 * scale:
        raise ValueError("Hamiltonian must be symmetric")
    energies, vectors = eigh_batch(matrix)
    return EigenFrame(energies=energies, vectors=vectors)


def nise_step(psi: np.ndarray, frame: EigenFrame, dt_fs: float) -> np.ndarray:
    """Eigenphase step exp(-i eps dt / hbar) for psi expressed in ``frame``."""
    phases = np.exp(-1j * np.asarray(frame.energies) * dt_fs / units.HBAR)
    return phases * np.asarray(psi, dtype=complex)


def nonadiabatic_S(frame: EigenFrame, next_frame: EigenFrame) -> Overlap:
    """
    Overlap S = W(t + dt)^T W(t) after flipping columns of the later frame
    so that diag(S) >= 0. ``degenerate`` marks any |S_aa| < 0.5.
    """
    if frame.vectors.shape != next_frame.vectors.shape:
        raise ValueError("Eigenframes differ in dimension")
    overlap = next_frame.vectors.T @ frame.vectors
    signs = np.where(np.diag(overlap) < 0, -1.0, 1.0)
    fixed = EigenFrame(
        energies=next_frame.energies, vectors=next_frame.vectors * signs[None, :]
    )
    matrix = signs[:, None] * overlap
    degenerate = bool(np.any(np.abs(np.diag(matrix)) < DEGENERATE_OVERLAP))
    return Overlap(matrix=matrix, frame=fixed, degenerate=degenerate)


def thermal_factor(
    overlap: np.ndarray, energies: np.ndarray, temperature: float
) -> np.ndarray:
    """
    Scale S_ab (destination a, source b) by exp((eps_b - eps_a) / 4kT),
    enhancing transfer into lower eigenstates. Works on stacked matrices.
    """
    kt = units.thermal_energy(temperature)
    eps = np.asarray(energies, dtype=float)
    factor = np.exp((eps[..., None, :] - eps[..., :, None]) / (4.0 * kt))
    n = factor.shape[-1]
    factor[..., np.arange(n), np.arange(n)] = 1.0
    return overlap * factor


class Propagator:
    """
    Steps a batch of realizations through their eigenframes.

    ``run`` yields U(t_i, 0) in the site basis for every time index, shape
    (R, N, N). ``coupling_modifier`` replaces the thermal factor when given;
    it receives (S, eps_t) for the whole batch.
    """

    def __init__(
        self,
        hamiltonian,
        dt_fs: float,
        mode: PropagationMode = PropagationMode.NISE,
        temperature: Optional[float] = None,
        coupling_modifier: Optional[CouplingModifier] = None,
    ):
        self.hamiltonian = _as_matrix(hamiltonian)
        if dt_fs <= 0:
            raise ValueError(f"Time step must be positive, got {dt_fs}")
        self.dt_fs = dt_fs
        self.mode = PropagationMode(mode)
        if self.mode == PropagationMode.TNISE and coupling_modifier is None:
            if temperature is None:
                raise ValueError("Thermalised propagation needs a temperature")
            units.thermal_energy(temperature)
        self.temperature = temperature
        self.coupling_modifier = coupling_modifier
        self.degenerate_steps = 0

    def _modify(self, overlap: np.ndarray, energies: np.ndarray) -> np.ndarray:
        if self.coupling_modifier is not None:
            return self.coupling_modifier(overlap, energies)
        if self.mode == PropagationMode.TNISE:
            return thermal_factor(overlap, energies, self.temperature)
        return overlap

    def run(self, noise: np.ndarray) -> Iterator[np.ndarray]:
        """Propagate noise of shape (R, L, N); yields L propagators."""
        noise = np.asarray(noise, dtype=float)
        if noise.ndim == 2:
            noise = noise[None]
        n_sites = self.hamiltonian.shape[0]
        if noise.shape[-1] != n_sites:
            raise ValueError(
                f"Noise has {noise.shape[-1]} sites, Hamiltonian has {n_sites}"
            )
        if not np.all(np.isfinite(noise)):
            raise ValueError("Noise contains NaN or infinite values")

        sites = np.arange(n_sites)
        effective = np.broadcast_to(
            self.hamiltonian, noise.shape[:2] + (n_sites, n_sites)
        ).copy()
        effective[..., sites, sites] += noise
        energies, vectors = eigh_batch(effective)

        frame = vectors[:, 0]
        amplitudes = np.swapaxes(frame, 1, 2).astype(complex)
        yield frame @ amplitudes
        for i in range(1, noise.shape[1]):
            phases = np.exp(-1j * energies[:, i - 1] * self.dt_fs / units.HBAR)
            amplitudes = phases[:, :, None] * amplitudes

            later = vectors[:, i]
            overlap = np.swapaxes(later, 1, 2) @ frame
            signs = np.where(np.diagonal(overlap, axis1=1, axis2=2) < 0, -1.0, 1.0)
            later = later * signs[:, None, :]
            overlap = signs[:, :, None] * overlap
            diagonal = np.abs(np.diagonal(overlap, axis1=1, axis2=2))
            rotated = np.any(diagonal < DEGENERATE_OVERLAP, axis=1)
            self.degenerate_steps += int(np.sum(rotated))

            amplitudes = self._modify(overlap, energies[:, i - 1]) @ amplitudes
            if self.mode == PropagationMode.TNISE:
                norms = np.linalg.norm(amplitudes, axis=1, keepdims=True)
                if np.any(norms == 0) or not np.all(np.isfinite(norms)):
                    raise NumericalError("Thermalised propagation lost its norm")
                amplitudes = amplitudes / norms
            frame = later
            yield frame @ amplitudes

    def report(self) -> None:
        if self.degenerate_steps:
            warnings.warn(
                f"{self.degenerate_steps} steps rotated the eigenframe by more than "
                f"|S_aa| < {DEGENERATE_OVERLAP}; consider a smaller time step",
                NumericalWarning,
                stacklevel=2,
            )


def substep_repeats(dt_fs: float, dt_sub_fs: Optional[float]) -> int:
    """Number of propagation steps per noise sample."""
    if dt_sub_fs is None or np.isclose(dt_sub_fs, dt_fs):
        return 1
    ratio = dt_fs / dt_sub_fs
    repeats = int(round(ratio))
    if repeats < 1 or abs(ratio - repeats) > 1e-6 * ratio:
        raise ValueError(
            f"Sub-step {dt_sub_fs} fs does not divide the noise step {dt_fs} fs"
        )
    return repeats


def substep_noise(noise: np.ndarray, dt_fs: float, dt_sub_fs: Optional[float]):
    """Hold each noise sample for dt / dt_sub sub-steps. Returns (noise, dt)."""
    repeats = substep_repeats(dt_fs, dt_sub_fs)
    if repeats == 1:
        return noise, dt_fs
    length = (noise.shape[-2] - 1) * repeats + 1
    held = np.repeat(noise, repeats, axis=-2)[..., :length, :]
    return held, dt_fs / repeats


def propagate_realization(
    hamiltonian,
    noise: NoiseTrajectory,
    temperature: Optional[float] = None,
    mode: PropagationMode = PropagationMode.NISE,
    dt_sub_fs: Optional[float] = None,
) -> PropagatorSeries:
    """U(t_i, 0) for one noise window, one matrix per time point."""
    values, dt = substep_noise(np.asarray(noise.values), noise.dt_fs, dt_sub_fs)
    propagator = Propagator(hamiltonian, dt, mode=mode, temperature=temperature)
    matrices = np.stack([u[0] for u in propagator.run(values[None])])
    propagator.report()
    return PropagatorSeries(matrices=matrices, dt_fs=dt, mode=mode)


def initial_vector(state: InitialState, n_sites: int) -> np.ndarray:
    if isinstance(state, WaveFunction):
        vector = np.asarray(state.amplitudes, dtype=complex)
    elif np.ndim(state) == 0:
        index = int(state)
        if not 0 <= index < n_sites:
            raise ValueError(f"Initial site {index} outside 0..{n_sites - 1}")
        vector = np.zeros(n_sites, dtype=complex)
        vector[index] = 1.0
    else:
        vector = np.asarray(state, dtype=complex)
    if vector.shape != (n_sites,):
        raise ValueError(f"Initial state must have {n_sites} amplitudes")
    norm = np.linalg.norm(vector)
    if norm == 0:
        raise ValueError("Initial state must be non-zero")
    return vector / norm


def project(propagators: np.ndarray, psi0: np.ndarray, normalize: bool) -> np.ndarray:
    """psi(t) = U(t) psi(0) for stacked propagators (..., N, N)."""
    psi = propagators @ psi0
    if normalize:
        psi = psi / np.linalg.norm(psi, axis=-1, keepdims=True)
    return psi


def outer_mean(psi: np.ndarray) -> np.ndarray:
    """Mean of |psi><psi| over the leading axis."""
    return np.einsum("rn,rm->nm", psi, psi.conj()) / psi.shape[0]


def hermitize(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))


def ensemble_density(
    series: List[PropagatorSeries], initial_state: InitialState
) -> EnsembleDensitySeries:
    """rho(t) = mean_r |psi_r(t)><psi_r(t)| with psi_r(t) = U_r(t) psi(0)."""
    if not series:
        raise ValueError("Ensemble density needs at least one realization")
    first = series[0]
    for other in series[1:]:
        if other.matrices.shape != first.matrices.shape:
            raise ValueError("Propagator series differ in shape")
    psi0 = initial_vector(initial_state, first.n_sites)
    stacked = np.stack([s.matrices for s in series])
    tnise = first.mode == PropagationMode.TNISE
    psi = project(stacked, psi0, normalize=tnise)
    rho = np.einsum("rtn,rtm->tnm", psi, psi.conj()) / len(series)
    return EnsembleDensitySeries(
        matrices=hermitize(rho), dt_fs=first.dt_fs, averaging=AveragingKind.PLAIN
    )


def boltzmann_density(hamiltonian, temperature: float) -> np.ndarray:
    """exp(-H / kT) / Tr exp(-H / kT)."""
    kt = units.thermal_energy(temperature)
    frame = eigh(hamiltonian)
    energies = np.asarray(frame.energies)
    weights = np.exp(-(energies - energies.min()) / kt)
    weights /= weights.sum()
    vectors = np.asarray(frame.vectors)
    return hermitize((vectors * weights) @ vectors.T)


def mean_effective_hamiltonian(hamiltonian, noise) -> np.ndarray:
    """H + diag(<dE_n>) averaged over every realization and time step."""
    matrix = _as_matrix(hamiltonian).copy()
    if isinstance(noise, NoiseTrajectory):
        samples = np.asarray(noise.values)
    elif isinstance(noise, (list, tuple)):
        samples = np.concatenate([np.asarray(t.values) for t in noise])
    else:
        samples = np.asarray(noise, dtype=float)
    shift = samples.reshape(-1, matrix.shape[0]).mean(axis=0)
    matrix[np.diag_indices_from(matrix)] += shift
    return matrix
