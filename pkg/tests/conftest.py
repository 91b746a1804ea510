import numpy as np
import pytest

from nise import io
from nise.models import DipoleSet, DrudeLorentzPeak, SystemHamiltonian
from nise.spectral import drude_lorentz


@pytest.fixture
def overdamped_bath():
    return drude_lorentz(
        DrudeLorentzPeak.from_width_time(center_cm1=0.0, reorg_cm1=50.0, width_fs=100.0)
    )


@pytest.fixture
def three_peak_bath():
    """Peaks at 0, 725 and 1200 cm^-1, 20 cm^-1 each, 100 fs widths."""
    return drude_lorentz(
        *(
            DrudeLorentzPeak.from_width_time(
                center_cm1=center, reorg_cm1=20.0, width_fs=100.0
            )
            for center in (0.0, 725.0, 1200.0)
        )
    )


@pytest.fixture
def transfer_dimer():
    return SystemHamiltonian(matrix=[[200.0, 100.0], [100.0, 0.0]])


@pytest.fixture
def write_run(tmp_path):
    """Writes a dimer system plus a config file and returns the config path."""

    def write(body: str, hamiltonian=None, dipoles=None):
        matrix = [[200.0, 100.0], [100.0, 0.0]] if hamiltonian is None else hamiltonian
        io.write_hamiltonian(
            tmp_path / "hamiltonian.csv", SystemHamiltonian(matrix=matrix)
        )
        vectors = np.eye(len(matrix), 3) if dipoles is None else dipoles
        io.write_dipoles(tmp_path / "dipoles.csv", DipoleSet(vectors=vectors))
        path = tmp_path / "run.ini"
        path.write_text(body, encoding="utf-8")
        return path

    return write


DIMER_RUN = """\
[system]
hamiltonian_file = hamiltonian.csv
dipole_file = dipoles.csv
initial_site = 1

[bath]
peaks = 0:50:100
temperature_K = 300

[noise]
dt_fs = 2
length_fs = 400
realizations = 6

[propagation]
mode = tnise
averaging = plain, constructed, interpolated
length_fs = 200

[absorption]
length_fs = 200
n_fft = 512

[run]
seed = 7
chunk_size = 4

[output]
directory = out
"""


@pytest.fixture
def dimer_text():
    return DIMER_RUN


@pytest.fixture
def dimer_run(write_run):
    return write_run(DIMER_RUN)
