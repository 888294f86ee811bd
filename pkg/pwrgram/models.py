import logging
import os
from datetime import datetime, timezone

from sqlalchemy import Boolean, Column, DateTime, Float, Integer, String, create_engine, select
from sqlalchemy.orm import DeclarativeBase, Session, sessionmaker

log = logging.getLogger(__name__)

PWRGRAM_DB_PATH = os.environ.get("PWRGRAM_DB_PATH", "data/bench.db")


class Base(DeclarativeBase):
    pass


class BenchRun(Base):
    __tablename__ = "bench_runs"

    id = Column(Integer, primary_key=True)
    created_at = Column(DateTime, default=lambda: datetime.now(timezone.utc), nullable=False)
    dataset = Column(String(400), nullable=False, index=True)
    site_count = Column(Integer, nullable=False)
    machine = Column(String(200), nullable=False, default="")

    precision = Column(String(10), nullable=False)
    culling = Column(String(20), nullable=False)
    traversal = Column(String(20), nullable=False)
    warm_start = Column(Boolean, nullable=False, default=False)
    leaf_size = Column(Integer, nullable=False)
    thread_count = Column(Integer, nullable=False)
    weight_ratio = Column(Float, nullable=True)  # set by weight sweeps only

    phase = Column(String(10), nullable=False)  # "warmup" or "timed"
    run_index = Column(Integer, nullable=False)
    status = Column(String(10), nullable=False)  # "ok" or "dnf"
    seconds = Column(Float, nullable=True)
    index_seconds = Column(Float, nullable=True)
    cells_seconds = Column(Float, nullable=True)

    nodes_visited = Column(Integer, default=0)
    leaves_visited = Column(Integer, default=0)
    clip_calls = Column(Integer, default=0)
    clip_unchanged = Column(Integer, default=0)
    stack_high_water = Column(Integer, default=0)
    empty_ratio = Column(Float, nullable=True)


# Database engine management

_engine = None
_SessionLocal = None


def get_engine():
    global _engine
    if _engine is None:
        os.makedirs(os.path.dirname(PWRGRAM_DB_PATH) or ".", exist_ok=True)
        _engine = create_engine(f"sqlite:///{PWRGRAM_DB_PATH}", echo=False)
        Base.metadata.create_all(_engine)
    return _engine


def get_session() -> Session:
    global _SessionLocal
    if _SessionLocal is None:
        _SessionLocal = sessionmaker(bind=get_engine())
    return _SessionLocal()


def reset_engine():
    """Forget the cached engine so the next call honors a new PWRGRAM_DB_PATH."""
    global _engine, _SessionLocal
    if _engine is not None:
        _engine.dispose()
    _engine = None
    _SessionLocal = None


_COLUMNS = {c.name for c in BenchRun.__table__.columns} - {"id", "created_at"}


def record_runs(rows: list[dict]) -> int:
    """Append one BenchRun per row dict; unknown keys are ignored."""
    session = get_session()
    try:
        for row in rows:
            session.add(BenchRun(**{k: v for k, v in row.items() if k in _COLUMNS}))
        session.commit()
    finally:
        session.close()
    log.debug("stored %d bench rows in %s", len(rows), PWRGRAM_DB_PATH)
    return len(rows)


def load_runs(dataset: str | None = None) -> list[BenchRun]:
    session = get_session()
    try:
        query = select(BenchRun).order_by(BenchRun.id)
        if dataset is not None:
            query = query.where(BenchRun.dataset == dataset)
        return list(session.scalars(query))
    finally:
        session.close()
