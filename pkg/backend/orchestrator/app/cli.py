"""
Command line for the face fitter
Run from backend/orchestrator as `python -m app.cli <command>`.
"""
import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from app.core.config import settings
from app.core.logging import setup_logging
from face.errors import FaceFitError
from face.pipeline import ABLATIONS, cmd_bench, cmd_eval, cmd_fit, cmd_synth_asset, cmd_synth_obs
from face.run_config import RunConfig

logger = logging.getLogger("app.cli")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON; every field optional")
    common.add_argument("--seed", type=int, help="root seed for every random stream")
    common.add_argument("--mode", choices=("offline", "tracking"))
    common.add_argument("--workers", type=int, help="accumulation threads (default: available cores)")
    common.add_argument("--output-dir", help="directory for all outputs and default inputs")
    common.add_argument("--log-level", default=None, help="overrides LOG_LEVEL")

    parser = argparse.ArgumentParser(prog="face-fit", description="Fit a 3D head model to dense 2D landmarks")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth-asset", parents=[common], help="write the toy head asset and its identity prior")
    sub.add_parser("synth-obs", parents=[common], help="write synthetic observations and ground truth")
    fit = sub.add_parser("fit", parents=[common], help="fit the model to observations")
    fit.add_argument("--record", action="store_true", help="store the run in the fit registry database")
    fit.add_argument("--export-meshes", action="store_true", help="write one OBJ mesh per frame")
    sub.add_parser("eval", parents=[common], help="compare a fit against ground truth")
    bench = sub.add_parser("bench", parents=[common], help="solver timing sweep or ablation study")
    bench.add_argument("--ablation", choices=ABLATIONS)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.load(args.config)
    # flags win, then the config file, then the environment settings
    workers = args.workers
    seed = args.seed
    if workers is None and "workers" not in config.model_fields_set:
        workers = settings.DEFAULT_WORKERS
    if seed is None and "seed" not in config.model_fields_set:
        seed = settings.DEFAULT_SEED
    overrides = {"seed": seed, "mode": args.mode, "workers": workers, "output_dir": args.output_dir}
    if getattr(args, "export_meshes", False):
        overrides["export_meshes"] = True
    return config.override(**overrides)


def run(args: argparse.Namespace) -> int:
    config = load_config(args)
    if args.command == "synth-asset":
        asset_path, prior_path = cmd_synth_asset(config)
        print(f"asset: {asset_path}\nprior: {prior_path}")
    elif args.command == "synth-obs":
        obs_path, truth_path = cmd_synth_obs(config)
        print(f"observations: {obs_path}\ntruth: {truth_path}")
    elif args.command == "fit":
        outcome = cmd_fit(config)
        print(f"parameters: {outcome.params_path}\nreport: {outcome.report_path}")
        print(f"energy {outcome.report.initial_energy:.6g} -> {outcome.report.final_energy:.6g} "
              f"({outcome.report.termination_reason})")
        if args.record:
            from app.db.database import SessionLocal, init_db
            from app.services.fit_runner import record_run

            init_db()
            db = SessionLocal()
            try:
                fit_run = record_run(db, outcome.report, config, source="cli")
                print(f"run: {fit_run.id}")
            finally:
                db.close()
    elif args.command == "eval":
        metrics, path = cmd_eval(config)
        print(f"metrics: {path}\nmean vertex RMSE: {metrics.mean_vertex_rmse:.6g}")
    elif args.command == "bench":
        print(f"csv: {cmd_bench(config, args.ablation)}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return run(args)
    except (FaceFitError, ValidationError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
