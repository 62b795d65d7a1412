"""
Script to create sample fit data for API testing
"""
import sys
from pathlib import Path

# Add the service root to path (it adds the backend itself)
backend_dir = Path(__file__).parent / "backend" / "orchestrator"
sys.path.insert(0, str(backend_dir))

from app.db.database import SessionLocal, init_db
from app.services.fit_runner import record_run
from face.pipeline import cmd_fit, cmd_synth_asset, cmd_synth_obs
from face.run_config import RunConfig

def create_sample_data(output_dir: str = "./data/runs/demo"):
    """Synthesize a small scene, fit it and record the run"""
    config = RunConfig.model_validate({
        "paths": {"output_dir": output_dir},
        "asset": {"landmark_count": 68},
        "scene": {"frames": 2},
        "solve": {"max_iterations": 20},
        "seed": 7,
    })
    asset_path, prior_path = cmd_synth_asset(config)
    print(f"[OK] Created asset: {asset_path}")
    print(f"[OK] Created prior: {prior_path}")
    obs_path, truth_path = cmd_synth_obs(config)
    print(f"[OK] Created observations: {obs_path}")

    outcome = cmd_fit(config)
    print(f"[OK] Fit finished: {outcome.report.termination_reason}, "
          f"E={outcome.report.final_energy:.6g}")

    init_db()
    db = SessionLocal()
    try:
        run = record_run(db, outcome.report, config, source="demo")
        print(f"\n[SUCCESS] Sample data created successfully!")
        print(f"\nRun ID: {run.id}")
        return run.id
    except Exception as e:
        db.rollback()
        print(f"[ERROR] Error: {e}")
        raise
    finally:
        db.close()

if __name__ == "__main__":
    run_id = create_sample_data()
