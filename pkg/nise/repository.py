from typing import List, Optional

from sqlmodel import Session, SQLModel, create_engine, select

from .models import RunRecord


class Repository:
    """Run records of one output directory, kept in ``runs.db``."""

    def __init__(self, database_url: str = "sqlite:///runs.db"):
        self.engine = create_engine(database_url, echo=False)
        self.create_db_and_tables()

    def create_db_and_tables(self):
        SQLModel.metadata.create_all(self.engine)

    def get_session(self) -> Session:
        return Session(self.engine)

    # RunRecord operations
    def add_run(self, record: RunRecord) -> RunRecord:
        with self.get_session() as session:
            session.add(record)
            session.commit()
            session.refresh(record)
            return record

    def get_all_runs(self) -> List[RunRecord]:
        with self.get_session() as session:
            statement = select(RunRecord).order_by(RunRecord.captured_at)
            return session.exec(statement).all()

    def get_runs_by_config(
        self, config_hash: str, command: Optional[str] = None
    ) -> List[RunRecord]:
        with self.get_session() as session:
            statement = select(RunRecord).where(RunRecord.config_hash == config_hash)
            if command is not None:
                statement = statement.where(RunRecord.command == command)
            return session.exec(statement.order_by(RunRecord.captured_at)).all()

    def get_runs_by_command(self, command: str) -> List[RunRecord]:
        with self.get_session() as session:
            statement = select(RunRecord).where(RunRecord.command == command)
            return session.exec(statement.order_by(RunRecord.captured_at)).all()
