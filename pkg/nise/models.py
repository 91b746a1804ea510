from datetime import datetime, timezone
from enum import Enum
from typing import Annotated, List, Optional, Tuple
from uuid import UUID, uuid4

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator
from sqlmodel import Field as TableField
from sqlmodel import SQLModel

from . import units


def _frozen_array(dtype):
    def convert(value):
        if value is None:
            return None
        array = np.array(value, dtype=dtype)
        array.flags.writeable = False
        return array

    return convert


FloatArray = Annotated[np.ndarray, BeforeValidator(_frozen_array(float))]
ComplexArray = Annotated[np.ndarray, BeforeValidator(_frozen_array(complex))]
BoolArray = Annotated[np.ndarray, BeforeValidator(_frozen_array(bool))]


class ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class Provenance(str, Enum):
    THEORETICAL = "theoretical"
    ESTIMATED = "estimated"


class DampingKind(str, Enum):
    GAUSSIAN = "gaussian"
    EXPONENTIAL = "exponential"
    STEP = "step"
    GENERAL = "general"


class PropagationMode(str, Enum):
    NISE = "nise"
    TNISE = "tnise"


class AveragingKind(str, Enum):
    PLAIN = "plain"
    CONSTRUCTED = "constructed"
    INTERPOLATED = "interpolated"


class Basis(str, Enum):
    SITE = "site"
    EIGEN = "instantaneous-eigen"


# Spectral densities


class DrudeLorentzPeak(ArrayModel):
    center_cm1: float = Field(ge=0)
    reorg_cm1: float = Field(ge=0)
    width_cm1: float = Field(gt=0)

    @classmethod
    def from_width_time(
        cls, center_cm1: float, reorg_cm1: float, width_fs: float
    ) -> "DrudeLorentzPeak":
        return cls(
            center_cm1=center_cm1,
            reorg_cm1=reorg_cm1,
            width_cm1=units.width_from_time(width_fs),
        )


class SpectralDensityModel(ArrayModel):
    """
    Either an analytic sum of Drude-Lorentz peaks or a tabulated curve.

    Tabulated curves may carry ``slope_at_zero``, the limit of J(w)/w at w=0,
    when it is known exactly (e.g. from a cosine transform).
    """

    peaks: Optional[Tuple[DrudeLorentzPeak, ...]] = None
    omega_cm1: Optional[FloatArray] = None
    values_cm1: Optional[FloatArray] = None
    slope_at_zero: Optional[float] = None

    @model_validator(mode="after")
    def check_form(self):
        tabulated = self.omega_cm1 is not None or self.values_cm1 is not None
        if self.peaks is not None and tabulated:
            raise ValueError("Give either Drude-Lorentz peaks or a table, not both")
        if self.peaks is None and not tabulated:
            raise ValueError("Spectral density needs peaks or a table")
        if tabulated:
            if self.omega_cm1 is None or self.values_cm1 is None:
                raise ValueError("Tabulated spectral density needs omega and J")
            omega, values = self.omega_cm1, self.values_cm1
            if omega.ndim != 1 or omega.shape != values.shape:
                raise ValueError("omega and J must be 1-D arrays of equal length")
            if len(self.omega_cm1) < 2:
                raise ValueError("Tabulated spectral density needs at least 2 points")
            if np.any(self.omega_cm1 < 0):
                raise ValueError("Tabulated frequencies must be non-negative")
            if np.any(np.diff(self.omega_cm1) <= 0):
                raise ValueError("Tabulated frequencies must be strictly increasing")
            if not np.all(np.isfinite(self.values_cm1)):
                raise ValueError("Tabulated J must be finite")
            if np.any(self.values_cm1 < 0):
                raise ValueError("Tabulated J must be non-negative")
            if self.omega_cm1[0] == 0 and self.values_cm1[0] != 0:
                raise ValueError("Tabulated J must vanish at omega = 0")
        return self

    @property
    def is_tabulated(self) -> bool:
        return self.peaks is None


class PowerSpectrum(ArrayModel):
    """Target power spectrum in cm^-2 fs on a two-sided FFT grid (numpy order)."""

    omega_cm1: FloatArray
    values: FloatArray
    dt_fs: float = Field(gt=0)
    n_steps: int = Field(ge=2)

    @model_validator(mode="after")
    def check_grid(self):
        if self.values.shape != (2 * self.n_steps,):
            raise ValueError(
                f"Power spectrum must hold {2 * self.n_steps} points, "
                f"got {self.values.shape}"
            )
        if self.omega_cm1.shape != self.values.shape:
            raise ValueError("Power spectrum grid and values differ in length")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("Power spectrum values must be finite and non-negative")
        return self


class NoiseTrajectory(ArrayModel):
    """Site energy fluctuations dE_n(t_i) in cm^-1, shape (n_steps, n_sites)."""

    values: FloatArray
    dt_fs: float = Field(gt=0)
    seed: Optional[int] = None
    realization: Optional[int] = None

    @model_validator(mode="after")
    def check_shape(self):
        if self.values.ndim == 1:
            column = _frozen_array(float)(self.values[:, None])
            object.__setattr__(self, "values", column)
        if self.values.ndim != 2:
            raise ValueError("Noise values must have shape (n_steps, n_sites)")
        return self

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_sites(self) -> int:
        return self.values.shape[1]

    @property
    def times_fs(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt_fs

    def site(self, index: int) -> "NoiseTrajectory":
        return NoiseTrajectory(
            values=self.values[:, index],
            dt_fs=self.dt_fs,
            seed=self.seed,
            realization=self.realization,
        )


# Bath analysis


class AutocorrelationSeries(ArrayModel):
    values: FloatArray
    dt_fs: float = Field(gt=0)
    provenance: Provenance = Provenance.ESTIMATED

    @model_validator(mode="after")
    def check_series(self):
        if self.values.ndim != 1 or len(self.values) < 2:
            raise ValueError("Autocorrelation needs a 1-D series of length >= 2")
        if self.values[0] < -1e-12 * max(1.0, np.max(np.abs(self.values))):
            raise ValueError("Autocorrelation C(0) must be non-negative")
        return self

    @property
    def times_fs(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.dt_fs


class DampingSpec(ArrayModel):
    kind: DampingKind
    cutoff_fs: float = Field(gt=0)
    exponent: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def check_exponent(self):
        if self.kind == DampingKind.GENERAL and self.exponent is None:
            raise ValueError("General damping needs an exponent b")
        return self

    @property
    def b(self) -> Optional[float]:
        if self.kind == DampingKind.GAUSSIAN:
            return 2.0
        if self.kind == DampingKind.EXPONENTIAL:
            return 1.0
        if self.kind == DampingKind.GENERAL:
            return self.exponent
        return None


# Super-resolution


class SuperResGrid(ArrayModel):
    gammas_cm1: FloatArray
    omegas_cm1: FloatArray

    @model_validator(mode="after")
    def check_grid(self):
        for name, grid in (("gamma", self.gammas_cm1), ("Omega", self.omegas_cm1)):
            if grid.ndim != 1 or len(grid) == 0:
                raise ValueError(f"{name} grid must be a non-empty 1-D array")
            if np.any(np.diff(grid) <= 0):
                raise ValueError(f"{name} grid must be strictly increasing")
        if np.any(self.gammas_cm1 <= 0):
            raise ValueError("Linewidths must be positive")
        return self

    @classmethod
    def desk_default(cls, omega_max_cm1: float = 1613.0) -> "SuperResGrid":
        return cls(
            gammas_cm1=np.arange(5.0, 200.0 + 1e-9, 5.0),
            omegas_cm1=np.arange(0.0, omega_max_cm1 + 1e-9, 2.0),
        )

    @classmethod
    def fine_default(cls) -> "SuperResGrid":
        step = 5e-5 * units.EV_TO_CM1
        return cls(
            gammas_cm1=np.arange(1.0, 200.0 + 1e-9, 0.5),
            omegas_cm1=np.arange(0.0, 0.2 * units.EV_TO_CM1 + 1e-9, step),
        )

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.gammas_cm1), len(self.omegas_cm1)


class SuperResSolution(ArrayModel):
    grid: SuperResGrid
    coefficients: FloatArray
    a: float = 1e4
    b: float = 1.0
    c: float = 0.1
    threshold: float = 5e-8
    cutoff_fs: float = Field(gt=0)
    objective: float = 0.0
    residual_norm: float = 0.0
    debiased: bool = False
    history: Tuple[float, ...] = ()

    @model_validator(mode="after")
    def check_coefficients(self):
        if self.coefficients.shape != self.grid.shape:
            raise ValueError(
                f"Coefficients shape {self.coefficients.shape} "
                f"does not match grid {self.grid.shape}"
            )
        if self.debiased and np.any(self.coefficients < 0):
            raise ValueError("Debiased coefficients must be non-negative")
        return self

    def retained(self) -> List[Tuple[float, float, float]]:
        """Non-zero modes as (gamma_cm1, Omega_cm1, lambda_cm2) triples."""
        rows, cols = np.nonzero(self.coefficients)
        return [
            (
                float(self.grid.gammas_cm1[i]),
                float(self.grid.omegas_cm1[j]),
                float(self.coefficients[i, j]),
            )
            for i, j in zip(rows, cols)
        ]


# Propagation


class SystemHamiltonian(ArrayModel):
    """Tight-binding matrix: site energies on the diagonal, couplings off it."""

    matrix: FloatArray

    @model_validator(mode="after")
    def check_matrix(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError("Hamiltonian must be a non-empty square matrix")
        if not np.all(np.isfinite(m)):
            raise ValueError("Hamiltonian entries must be finite")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - m.T)) > 1e-10 * scale:
            raise ValueError("Hamiltonian must be symmetric")
        return self

    @property
    def n_sites(self) -> int:
        return self.matrix.shape[0]

    @property
    def site_energies(self) -> np.ndarray:
        return np.diag(self.matrix).copy()


class EigenFrame(ArrayModel):
    energies: FloatArray
    vectors: FloatArray


class WaveFunction(ArrayModel):
    amplitudes: ComplexArray
    basis: Basis = Basis.SITE


class PropagatorSeries(ArrayModel):
    """U(t_i, 0) in the site basis, shape (n_times, N, N)."""

    matrices: ComplexArray
    dt_fs: float = Field(gt=0)
    mode: PropagationMode = PropagationMode.NISE

    @property
    def n_times(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_sites(self) -> int:
        return self.matrices.shape[1]

    @property
    def times_fs(self) -> np.ndarray:
        return np.arange(self.n_times) * self.dt_fs


class EnsembleDensitySeries(ArrayModel):
    """
    Density matrices rho(t_i), shape (n_times, N, N).

    Interpolated series only interpolate populations; their coherences are
    copied unchanged, so positivity is checked on the diagonal only.
    """

    matrices: ComplexArray
    dt_fs: float = Field(gt=0)
    averaging: AveragingKind = AveragingKind.PLAIN

    @model_validator(mode="after")
    def check_density(self):
        rho = self.matrices
        if rho.ndim != 3 or rho.shape[1] != rho.shape[2]:
            raise ValueError("Density series must have shape (n_times, N, N)")
        if np.max(np.abs(rho - np.conj(np.swapaxes(rho, 1, 2))), initial=0) > 1e-8:
            raise ValueError("Density matrices must be Hermitian")
        traces = np.trace(rho, axis1=1, axis2=2).real
        if np.max(np.abs(traces - 1.0), initial=0) > 1e-8:
            raise ValueError("Density matrices must have unit trace")
        if self.averaging == AveragingKind.INTERPOLATED:
            lowest = np.min(np.diagonal(rho, axis1=1, axis2=2).real, initial=0)
        else:
            lowest = np.min(np.linalg.eigvalsh(rho), initial=0)
        if lowest < -1e-8:
            raise ValueError("Density matrices must be positive semidefinite")
        return self

    @property
    def n_times(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_sites(self) -> int:
        return self.matrices.shape[1]

    @property
    def times_fs(self) -> np.ndarray:
        return np.arange(self.n_times) * self.dt_fs


class LifetimeSet(ArrayModel):
    taus_fs: FloatArray
    quality: FloatArray
    fallback: BoolArray

    @model_validator(mode="after")
    def check_taus(self):
        if np.any(self.taus_fs <= 0):
            raise ValueError("Lifetimes must be positive")
        if not (self.taus_fs.shape == self.quality.shape == self.fallback.shape):
            raise ValueError("Lifetime arrays must have one entry per site")
        return self


# Observables


class DipoleSet(ArrayModel):
    """Transition dipole vectors d_0n, shape (N, 3)."""

    vectors: FloatArray

    @model_validator(mode="after")
    def check_vectors(self):
        if self.vectors.ndim == 1:
            column = _frozen_array(float)(self.vectors[:, None])
            object.__setattr__(self, "vectors", column)
        if self.vectors.ndim != 2:
            raise ValueError("Dipoles must have shape (n_sites, n_axes)")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("Dipoles must be finite")
        if not np.any(self.vectors):
            raise ValueError("At least one dipole must be non-zero")
        return self

    @property
    def n_sites(self) -> int:
        return self.vectors.shape[0]


class AbsorptionSpectrum(ArrayModel):
    omega_cm1: FloatArray
    intensity: FloatArray
    shift_cm1: float = 0.0
    normalization: str = "none"

    @model_validator(mode="after")
    def check_spectrum(self):
        if self.omega_cm1.shape != self.intensity.shape or self.omega_cm1.ndim != 1:
            raise ValueError("Spectrum grid and intensity must be 1-D and equal length")
        steps = np.diff(self.omega_cm1)
        if len(steps) and not np.allclose(steps, steps[0], rtol=1e-8, atol=1e-10):
            raise ValueError("Spectrum grid must be uniform")
        if not np.all(np.isfinite(self.intensity)):
            raise ValueError("Spectrum intensity must be finite")
        return self

    @property
    def bin_width_cm1(self) -> float:
        return float(self.omega_cm1[1] - self.omega_cm1[0])


# Persistence


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


class RunRecord(SQLModel, table=True):
    id: Optional[UUID] = TableField(default_factory=uuid4, primary_key=True)
    command: str = TableField(index=True)
    config_hash: str
    seed: Optional[int] = None
    versions_json: str = "{}"
    outputs_json: str = "[]"
    captured_at: datetime = TableField(default_factory=_utc_now)
    algo_version: str = "0.1.0"
