"""
Fit run registry
Stores fits and their LM iterations, and runs queued fits in the background.
"""
import logging
from typing import Any, Dict, Optional

from sqlalchemy.orm import Session

from app.db.database import SessionLocal
from app.db.models import FitIteration, FitRun, FitStatus
from face.errors import AssetError, FaceFitError
from face.pipeline import cmd_fit
from face.run_config import RunConfig
from face.solver import SolveReport

logger = logging.getLogger(__name__)


def _finite(value: float) -> Optional[float]:
    return value if value == value and abs(value) != float("inf") else None


def validate_inputs(config: RunConfig) -> None:
    """Fail early when the files a fit needs are missing"""
    for name in ("asset", "observations"):
        path = config.paths.resolve(name)
        if not path.is_file():
            raise AssetError(f"{name} file not found: {path}")
    if config.init.kind == "perturbed" and not config.paths.resolve("truth").is_file():
        raise AssetError("perturbed initialization needs a truth file")


def create_run(db: Session, config: RunConfig, source: str = "api") -> FitRun:
    run = FitRun(
        status=FitStatus.pending,
        source=source,
        mode=config.mode,
        seed=config.seed,
        config=config.resolved(),
    )
    db.add(run)
    db.commit()
    db.refresh(run)
    return run


def record_run(
    db: Session,
    report: SolveReport,
    config: RunConfig,
    run: Optional[FitRun] = None,
    source: str = "cli",
) -> FitRun:
    """Store a finished fit and one row per LM iteration"""
    if run is None:
        run = create_run(db, config, source=source)
    for it in report.iterations:
        db.add(FitIteration(
            run_id=run.id,
            iteration=it.iteration,
            frame=it.frame,
            total_energy=it.energy,
            trial_energy=_finite(it.trial_energy),
            terms=it.terms,
            lm_damping=it.lm_damping,
            accepted=it.accepted,
        ))
    run.status = FitStatus.done
    run.final_energy = report.final_energy
    run.final_terms = report.final_terms
    run.termination_reason = report.termination_reason
    run.iteration_count = report.iteration_count
    run.total_time = report.total_time
    db.add(run)
    db.commit()
    db.refresh(run)
    logger.info("Recorded fit run %s (%d iterations)", run.id, report.iteration_count)
    return run


def execute_fit(run_id: str, config_data: Dict[str, Any]) -> None:
    """Background task: run the fit and move the run through its status states"""
    db = SessionLocal()
    try:
        run = db.query(FitRun).filter(FitRun.id == run_id).first()
        if run is None:
            logger.error("Fit run %s vanished before it started", run_id)
            return
        run.status = FitStatus.processing
        db.commit()
        try:
            outcome = cmd_fit(RunConfig.model_validate(config_data))
        except FaceFitError as exc:
            logger.error("Fit run %s failed: %s", run_id, exc)
            run.status = FitStatus.failed
            run.error = str(exc)
            db.commit()
            return
        except Exception as exc:
            logger.exception("Fit run %s crashed", run_id)
            run.status = FitStatus.failed
            run.error = f"{type(exc).__name__}: {exc}"
            db.commit()
            return
        record_run(db, outcome.report, RunConfig.model_validate(config_data), run=run)
    finally:
        db.close()
