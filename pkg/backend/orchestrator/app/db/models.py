from sqlalchemy import Column, String, Integer, Float, Boolean, DateTime, Enum, JSON, ForeignKey, Text
from datetime import datetime, timezone
import uuid
from sqlalchemy.sql import func
from .database import Base
import enum

class FitStatus(enum.Enum):
    pending = "pending"
    processing = "processing"
    done = "done"
    failed = "failed"

class FitRun(Base):
    __tablename__ = "fit_runs"
    id = Column(String(36), primary_key=True, default=lambda: str(uuid.uuid4()))
    status = Column(Enum(FitStatus), default=FitStatus.pending)
    source = Column(String, default="api")
    mode = Column(String, nullable=False)
    seed = Column(Integer)
    config = Column(JSON)
    final_energy = Column(Float)
    final_terms = Column(JSON)
    termination_reason = Column(String)
    iteration_count = Column(Integer)
    total_time = Column(Float)
    error = Column(Text)
    created_at = Column(DateTime(timezone=True), default=lambda: datetime.now(timezone.utc), server_default=func.now())

class FitIteration(Base):
    __tablename__ = "fit_iterations"
    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String(36), ForeignKey("fit_runs.id"), nullable=False)
    iteration = Column(Integer, nullable=False)
    frame = Column(Integer)
    total_energy = Column(Float)
    trial_energy = Column(Float)
    terms = Column(JSON)
    lm_damping = Column(Float)
    accepted = Column(Boolean)
    created_at = Column(DateTime(timezone=True), server_default=func.now())
