from pathlib import Path
from typing import Dict, List

import numpy as np

from . import io
from .config import (
    AbsorptionSection,
    BathSection,
    NoiseSection,
    OutputSection,
    PeakSpec,
    PropagationSection,
    RunConfig,
    RunSection,
    SystemSection,
)
from .models import AveragingKind, DipoleSet, PropagationMode, SystemHamiltonian

# Three Drude-Lorentz peaks with equal weight; widths are quoted as times.
THREE_PEAK_BATH = [
    PeakSpec(center_cm1=0.0, reorg_cm1=20.0, width_fs=100.0),
    PeakSpec(center_cm1=725.0, reorg_cm1=20.0, width_fs=100.0),
    PeakSpec(center_cm1=1200.0, reorg_cm1=20.0, width_fs=100.0),
]

# Two-site benchmarks: E1 (E2 = 0), coupling V, overdamped bath lambda / width.
DIMER_SYSTEMS: Dict[str, Dict[str, float]] = {
    "dimer_strong_bath": {
        "energy_cm1": -302.4,
        "coupling_cm1": 134.8,
        "reorg_cm1": 192.6,
        "width_fs": 81.8,
        "temperature_K": 300.0,
    },
    "dimer_weak_bath": {
        "energy_cm1": -72.3,
        "coupling_cm1": 63.5,
        "reorg_cm1": 9.2,
        "width_fs": 81.0,
        "temperature_K": 300.0,
    },
    "dimer_negative_coupling": {
        "energy_cm1": -253.5,
        "coupling_cm1": -82.4,
        "reorg_cm1": 386.3,
        "width_fs": 65.8,
        "temperature_K": 300.0,
    },
}

FMO_SITE_ENERGIES = [12410.0, 12530.0, 12210.0, 12320.0, 12480.0, 12620.0, 12440.0]
FMO_COUPLINGS = [
    [0.0, -87.7, 5.5, -5.9, 6.7, -13.7, -9.9],
    [-87.7, 0.0, 30.8, 8.2, 0.7, 11.8, 4.3],
    [5.5, 30.8, 0.0, -53.5, -2.2, -9.6, 6.0],
    [-5.9, 8.2, -53.5, 0.0, -70.7, -17.0, -63.3],
    [6.7, 0.7, -2.2, -70.7, 0.0, 81.1, -1.3],
    [-13.7, 11.8, -9.6, -17.0, 81.1, 0.0, 39.7],
    [-9.9, 4.3, 6.0, -63.3, -1.3, 39.7, 0.0],
]


def dimer_hamiltonian(energy_cm1: float, coupling_cm1: float) -> SystemHamiltonian:
    return SystemHamiltonian(matrix=[[energy_cm1, coupling_cm1], [coupling_cm1, 0.0]])


def transfer_dimer() -> SystemHamiltonian:
    """Gap 200 cm^-1, coupling 100 cm^-1; site 1 is the upper site."""
    return SystemHamiltonian(matrix=[[200.0, 100.0], [100.0, 0.0]])


def fmo_hamiltonian() -> SystemHamiltonian:
    return SystemHamiltonian(
        matrix=np.diag(FMO_SITE_ENERGIES) + np.asarray(FMO_COUPLINGS)
    )


def fmo_dipoles() -> DipoleSet:
    """
    Unit dipoles spread over a Fibonacci sphere.

    These are illustrative orientations, not measured ones; swap in real
    pigment geometries for quantitative spectra.
    """
    n = len(FMO_SITE_ENERGIES)
    index = np.arange(n) + 0.5
    polar = np.arccos(1 - 2 * index / n)
    azimuth = np.pi * (1 + 5**0.5) * index
    return DipoleSet(
        vectors=np.column_stack(
            [
                np.cos(azimuth) * np.sin(polar),
                np.sin(azimuth) * np.sin(polar),
                np.cos(polar),
            ]
        )
    )


def dimer_config(name: str, seed: int = 1234, realizations: int = 10000) -> RunConfig:
    """Propagation of a benchmark dimer with every averaging scheme."""
    system = DIMER_SYSTEMS[name]
    return RunConfig(
        system=SystemSection(hamiltonian_file=f"{name}.csv", initial_site=1),
        bath=BathSection(
            peaks=[
                PeakSpec(
                    center_cm1=0.0,
                    reorg_cm1=system["reorg_cm1"],
                    width_fs=system["width_fs"],
                )
            ],
            temperature_K=system["temperature_K"],
        ),
        noise=NoiseSection(dt_fs=1.0, realizations=realizations),
        propagation=PropagationSection(
            mode=PropagationMode.TNISE,
            averaging=[
                AveragingKind.PLAIN,
                AveragingKind.CONSTRUCTED,
                AveragingKind.INTERPOLATED,
            ],
            length_fs=1000.0,
        ),
        run=RunSection(seed=seed),
        output=OutputSection(directory=f"output/{name}"),
    )


def fmo_absorption_config(seed: int = 1234, realizations: int = 5000) -> RunConfig:
    """FMO spectrum with the three-peak bath scaled to 6 cm^-1."""
    return RunConfig(
        system=SystemSection(
            hamiltonian_file="fmo_hamiltonian.csv", dipole_file="fmo_dipoles.csv"
        ),
        bath=BathSection(peaks=THREE_PEAK_BATH, reorg_cm1=6.0, temperature_K=300.0),
        noise=NoiseSection(dt_fs=2.0, realizations=realizations),
        propagation=PropagationSection(mode=PropagationMode.NISE),
        absorption=AbsorptionSection(length_fs=2000.0, n_fft=4096, normalize=True),
        run=RunSection(seed=seed),
        output=OutputSection(directory="output/fmo_absorption"),
    )


def noise_config(seed: int = 1234, realizations: int = 1000) -> RunConfig:
    return RunConfig(
        bath=BathSection(peaks=THREE_PEAK_BATH, temperature_K=300.0),
        noise=NoiseSection(dt_fs=2.0, length_fs=10000.0, realizations=realizations),
        run=RunSection(seed=seed),
        output=OutputSection(directory="output/noise"),
    )


def write_demo(directory) -> List[Path]:
    """
    Writes the reference systems and ready-to-run configurations.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [
        io.write_hamiltonian(directory / "fmo_hamiltonian.csv", fmo_hamiltonian()),
        io.write_dipoles(directory / "fmo_dipoles.csv", fmo_dipoles()),
        io.write_hamiltonian(directory / "transfer_dimer.csv", transfer_dimer()),
    ]
    for name, system in DIMER_SYSTEMS.items():
        hamiltonian = dimer_hamiltonian(system["energy_cm1"], system["coupling_cm1"])
        written.append(io.write_hamiltonian(directory / f"{name}.csv", hamiltonian))
        config_path = directory / f"{name}.ini"
        config_path.write_text(dimer_config(name).to_ini(), encoding="utf-8")
        written.append(config_path)

    for filename, config in (
        ("fmo_absorption.ini", fmo_absorption_config()),
        ("three_peak_noise.ini", noise_config()),
    ):
        path = directory / filename
        path.write_text(config.to_ini(), encoding="utf-8")
        written.append(path)

    print(f"Demo inputs written to {directory}")
    print(f"- Benchmark dimers: {', '.join(DIMER_SYSTEMS)}")
    print(f"- FMO sites: {len(FMO_SITE_ENERGIES)}")
    print(f"- Total files: {len(written)}")
    return written


if __name__ == "__main__":
    write_demo("demo")
