from typing import Optional
from fastapi import APIRouter, HTTPException, BackgroundTasks, Depends
from sqlalchemy.orm import Session
from app.db.database import get_db
from app.db.models import FitRun, FitIteration
from app.services.fit_runner import create_run, execute_fit, validate_inputs
from face.errors import FaceFitError
from face.run_config import RunConfig

router = APIRouter()


def _run_summary(run: FitRun) -> dict:
    return {
        "run_id": run.id,
        "status": run.status.value,
        "source": run.source,
        "mode": run.mode,
        "seed": run.seed,
        "final_energy": run.final_energy,
        "termination_reason": run.termination_reason,
        "created_at": run.created_at,
    }


@router.post("/fits", status_code=202)
async def submit_fit(
    payload: RunConfig,
    background_tasks: BackgroundTasks,
    db: Session = Depends(get_db)
):
    """
    Queue a fit described by a run config.
    The fit runs in the background and records its iterations.
    """
    try:
        validate_inputs(payload)
    except FaceFitError as exc:
        raise HTTPException(status_code=400, detail=str(exc))

    run = create_run(db, payload)
    background_tasks.add_task(execute_fit, run.id, payload.model_dump(mode="json"))

    return {"run_id": run.id, "status": "queued"}


# get /fits
@router.get("/fits")
def list_fits(mode: Optional[str] = None, limit: int = 20, db: Session = Depends(get_db)):
    """List fit runs, newest first"""
    query = db.query(FitRun)
    if mode is not None:
        query = query.filter(FitRun.mode == mode)
    runs = query.order_by(FitRun.created_at.desc()).limit(limit).all()
    return [_run_summary(r) for r in runs]


# get /fits/{run_id}
@router.get("/fits/{run_id}")
def get_fit(run_id: str, db: Session = Depends(get_db)):
    """Get a fit run with its iteration summary"""
    run = db.query(FitRun).filter(FitRun.id == run_id).first()
    if not run:
        raise HTTPException(status_code=404, detail="fit run not found")

    iterations = (
        db.query(FitIteration)
        .filter(FitIteration.run_id == run_id)
        .order_by(FitIteration.id)
        .all()
    )
    detail = _run_summary(run)
    detail.update({
        "final_terms": run.final_terms,
        "total_time": run.total_time,
        "error": run.error,
        "config": run.config,
        "iterations": {
            "count": len(iterations),
            "accepted": sum(1 for it in iterations if it.accepted),
            "first_energy": iterations[0].total_energy if iterations else None,
            "last_energy": iterations[-1].total_energy if iterations else None,
        },
    })
    return detail


# get /fits/{run_id}/iterations
@router.get("/fits/{run_id}/iterations")
def list_iterations(run_id: str, db: Session = Depends(get_db)):
    """Ordered LM iterations of a fit run"""
    if not db.query(FitRun).filter(FitRun.id == run_id).first():
        raise HTTPException(status_code=404, detail="fit run not found")
    iterations = (
        db.query(FitIteration)
        .filter(FitIteration.run_id == run_id)
        .order_by(FitIteration.id)
        .all()
    )
    return [
        {
            "iteration": it.iteration,
            "frame": it.frame,
            "total_energy": it.total_energy,
            "trial_energy": it.trial_energy,
            "terms": it.terms,
            "lm_damping": it.lm_damping,
            "accepted": it.accepted,
        }
        for it in iterations
    ]
