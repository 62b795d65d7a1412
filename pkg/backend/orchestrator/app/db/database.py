from sqlalchemy import create_engine, event
from sqlalchemy.orm import sessionmaker, declarative_base
from app.core.config import settings
import logging
import os

logger = logging.getLogger(__name__)

# Ensure data directory exists
os.makedirs(settings.DATA_DIR, exist_ok=True)

logger.debug("DATABASE_URL = %s", settings.DATABASE_URL)

# SQLite engine with check_same_thread=False: background fits write from worker threads
engine = create_engine(
    settings.DATABASE_URL,
    connect_args={"check_same_thread": False},
    echo=settings.DEBUG
)


@event.listens_for(engine, "connect")
def _enable_foreign_keys(dbapi_connection, connection_record):
    # fit_iterations.run_id must point at an existing fit run
    cursor = dbapi_connection.cursor()
    cursor.execute("PRAGMA foreign_keys=ON")
    cursor.close()


SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

Base = declarative_base()


def init_db() -> None:
    """Create the fit registry tables (no migrations yet)"""
    from app.db import models  # noqa: F401  registers the tables on Base

    Base.metadata.create_all(bind=engine)


# Dependency for FastAPI routes
def get_db():
    """Database session dependency for FastAPI"""
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
