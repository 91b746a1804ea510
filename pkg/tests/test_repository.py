import json
from datetime import timezone

from nise.models import RunRecord
from nise.repository import Repository


def make_record(command="propagate", config_hash="abc", seed=1):
    return RunRecord(
        command=command,
        config_hash=config_hash,
        seed=seed,
        outputs_json=json.dumps(["populations_plain.csv"]),
    )


class TestRunRecord:
    def test_captured_at_is_utc(self):
        record = make_record()
        assert record.captured_at.tzinfo is timezone.utc


class TestRepository:
    def test_add_run(self):
        repository = Repository("sqlite:///:memory:")

        saved = repository.add_run(make_record())

        (retrieved,) = repository.get_all_runs()
        assert retrieved.id == saved.id
        assert retrieved.command == "propagate"
        assert json.loads(retrieved.outputs_json) == ["populations_plain.csv"]

    def test_get_all_runs_in_capture_order(self):
        repository = Repository("sqlite:///:memory:")

        repository.add_run(make_record("gen-noise"))
        repository.add_run(make_record("propagate"))

        runs = repository.get_all_runs()
        assert [run.command for run in runs] == ["gen-noise", "propagate"]

    def test_runs_by_config(self):
        repository = Repository("sqlite:///:memory:")

        repository.add_run(make_record(config_hash="abc", seed=1))
        repository.add_run(make_record(config_hash="abc", seed=2))
        repository.add_run(make_record(config_hash="def"))

        runs = repository.get_runs_by_config("abc")
        assert [run.seed for run in runs] == [1, 2]

    def test_runs_by_config_and_command(self):
        repository = Repository("sqlite:///:memory:")

        repository.add_run(make_record("propagate", config_hash="abc"))
        repository.add_run(make_record("absorption", config_hash="abc"))

        runs = repository.get_runs_by_config("abc", command="absorption")
        assert [run.command for run in runs] == ["absorption"]

    def test_runs_by_command(self):
        repository = Repository("sqlite:///:memory:")

        repository.add_run(make_record("absorption"))
        repository.add_run(make_record("propagate"))

        runs = repository.get_runs_by_command("absorption")
        assert len(runs) == 1

    def test_file_database_persists(self, tmp_path):
        url = f"sqlite:///{tmp_path / 'runs.db'}"
        Repository(url).add_run(make_record())

        assert len(Repository(url).get_all_runs()) == 1
