import csv
import json
import os

import pytest

from app.cli import build_parser, load_config, main
from app.core.config import settings
from app.db.database import SessionLocal, init_db
from app.db.models import FitRun
from face.run_config import RunConfig


def _write_config(tmp_path, **changes):
    config = {
        "paths": {"output_dir": str(tmp_path / "run")},
        "asset": {"landmark_count": 68, "identity_dims": 8, "expression_dims": 10, "prior_components": 2},
        "scene": {"noise": {"sigma_min": 0.0, "sigma_max": 0.0}},
        "init": {"kind": "perturbed"},
        "energy": {"term_weights": {"identity": 0, "expression": 0, "joints": 0, "temporal": 0, "intersect": 0}},
        "solve": {"max_iterations": 100},
        "seed": 7,
        "workers": 1,
    }
    config.update(changes)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return str(path)


def _artifact(path):
    return json.loads(path.read_text())


def test_synth_asset_is_reproducible(tmp_path):
    config = _write_config(tmp_path)
    assert main(["synth-asset", "--config", config]) == 0
    first = (tmp_path / "run" / "asset.json").read_bytes()
    prior = (tmp_path / "run" / "prior.json").read_bytes()
    assert main(["synth-asset", "--config", config]) == 0
    assert (tmp_path / "run" / "asset.json").read_bytes() == first
    assert (tmp_path / "run" / "prior.json").read_bytes() == prior
    doc = _artifact(tmp_path / "run" / "asset.json")
    assert doc["kind"] == "model_asset"
    assert doc["header"]["landmark_count"] == 68
    assert doc["config"]["seed"] == 7


def test_synthesize_fit_and_evaluate(tmp_path):
    config = _write_config(tmp_path)
    run = tmp_path / "run"
    assert main(["synth-asset", "--config", config]) == 0
    assert main(["synth-obs", "--config", config]) == 0
    assert _artifact(run / "observations.json")["header"]["count"] == 68
    assert main(["fit", "--config", config, "--export-meshes"]) == 0
    report = _artifact(run / "report.json")["payload"]
    assert report["final_energy"] < 1e-6 * report["initial_energy"]
    assert (run / "meshes" / "frame_000.obj").is_file()
    assert main(["eval", "--config", config]) == 0
    metrics = _artifact(run / "metrics.json")["payload"]
    assert metrics["reprojection_rmse"] < 0.05


def test_fit_record_creates_a_registry_row(tmp_path):
    config = _write_config(tmp_path, solve={"max_iterations": 3})
    assert main(["synth-asset", "--config", config]) == 0
    assert main(["synth-obs", "--config", config]) == 0
    init_db()
    db = SessionLocal()
    try:
        before = db.query(FitRun).filter(FitRun.source == "cli").count()
        assert main(["fit", "--config", config, "--record"]) == 0
        runs = db.query(FitRun).filter(FitRun.source == "cli").all()
    finally:
        db.close()
    assert len(runs) == before + 1
    assert all(run.iteration_count <= 3 for run in runs)


def test_bench_writes_phase_timings(tmp_path):
    config = _write_config(
        tmp_path,
        bench={"landmark_counts": [68], "thresholds": [0.0, 1e-6], "repetitions": 1, "iterations": 4},
        scene={"noise": {"sigma_min": 0.5, "sigma_max": 2.0}},
    )
    assert main(["bench", "--config", config]) == 0
    path = tmp_path / "run" / "bench.csv"
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert {row["epsilon"] for row in rows} == {"0.0", "1e-06"}
    for row in rows:
        total = float(row["total"])
        assert int(row["iterations"]) == 4
        assert abs(total - float(row["phase_sum"])) <= 0.05 * total
        assert float(row["accumulation_per_iteration"]) == pytest.approx(float(row["accumulation"]) / 4)
        assert float(row["total_per_iteration"]) == pytest.approx(total / 4)
    sidecar = json.loads(path.with_suffix(".config.json").read_text())
    assert sidecar["bench"]["iterations"] == 4


def test_missing_asset_fails_cleanly(tmp_path):
    config = _write_config(tmp_path)
    assert main(["fit", "--config", config]) == 1


def test_truncated_asset_fails_cleanly(tmp_path):
    config = _write_config(tmp_path)
    assert main(["synth-asset", "--config", config]) == 0
    assert main(["synth-obs", "--config", config]) == 0
    path = tmp_path / "run" / "asset.json"
    doc = _artifact(path)
    doc["arrays"]["identity_basis"] = doc["arrays"]["identity_basis"][:-1]
    path.write_text(json.dumps(doc))
    assert main(["fit", "--config", config]) == 1


def test_invalid_config_fails_cleanly(tmp_path):
    config = _write_config(tmp_path, energy={"term_weights": {"landmarks": 2.0}})
    assert main(["synth-asset", "--config", config]) == 1


def test_bad_arguments_exit_with_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["fit", "--mode", "sideways"])
    assert err.value.code == 2


def test_workers_default_to_available_cores(tmp_path):
    assert RunConfig().workers == (os.cpu_count() or 1)
    assert RunConfig().solve.workers == RunConfig().workers
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"seed": 5}))
    config = load_config(build_parser().parse_args(["fit", "--config", str(path)]))
    assert config.workers == settings.DEFAULT_WORKERS
    assert config.seed == 5


def test_workers_from_file_and_flag(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"workers": 3}))
    assert load_config(build_parser().parse_args(["fit", "--config", str(path)])).workers == 3
    flagged = load_config(build_parser().parse_args(["fit", "--config", str(path), "--workers", "2"]))
    assert flagged.workers == 2
    assert flagged.solve.workers == 2
