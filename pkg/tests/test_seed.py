import numpy as np
import pytest

from app import main
from nise import seed
from nise.config import RunConfig
from nise.models import PropagationMode


class TestReferenceSystems:
    def test_fmo_is_symmetric(self):
        matrix = np.asarray(seed.fmo_hamiltonian().matrix)
        assert matrix.shape == (7, 7)
        np.testing.assert_allclose(matrix, matrix.T)
        assert matrix[0, 0] == 12410.0

    def test_fmo_dipoles_are_unit_vectors(self):
        vectors = np.asarray(seed.fmo_dipoles().vectors)
        np.testing.assert_allclose(np.linalg.norm(vectors, axis=1), 1.0)

    def test_dimer_config_round_trips(self):
        config = seed.dimer_config("dimer_weak_bath", seed=5, realizations=10)
        again = RunConfig.from_ini(config.to_ini())
        assert again.config_hash() == config.config_hash()
        assert again.propagation.mode == PropagationMode.TNISE
        assert again.bath.peaks[0].reorg_cm1 == pytest.approx(9.2)


class TestWriteDemo:
    def test_configurations_load(self, tmp_path):
        written = seed.write_demo(tmp_path)
        configs = [path for path in written if path.suffix == ".ini"]
        assert len(configs) == len(seed.DIMER_SYSTEMS) + 2
        for path in configs:
            RunConfig.from_file(path)

    def test_demo_command(self, tmp_path):
        assert main(["demo", "-o", str(tmp_path / "demo")]) == 0
        assert (tmp_path / "demo" / "fmo_absorption.ini").exists()
        assert (tmp_path / "demo" / "manifest.json").exists()
