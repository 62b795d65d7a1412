import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.services import fit_runner
from face.pipeline import cmd_synth_asset, cmd_synth_obs
from face.run_config import RunConfig

client = TestClient(app)

DATA_ONLY = {"term_weights": {"identity": 0, "expression": 0, "joints": 0, "temporal": 0, "intersect": 0}}


def _config(output_dir, **changes):
    data = {
        "paths": {"output_dir": str(output_dir)},
        "asset": {"landmark_count": 68, "identity_dims": 8, "expression_dims": 10, "prior_components": 2},
        "scene": {"noise": {"sigma_min": 0.0, "sigma_max": 0.0}},
        "init": {"kind": "perturbed"},
        "energy": DATA_ONLY,
        "solve": {"max_iterations": 5},
        "seed": 3,
    }
    data.update(changes)
    return data


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("api-run")
    config = RunConfig.model_validate(_config(out))
    cmd_synth_asset(config)
    cmd_synth_obs(config)
    return out


def test_root_and_health():
    assert client.get("/").json()["health"] == "/health"
    assert client.get("/health").json()["status"] == "healthy"


def test_submitted_fit_runs_to_completion(run_dir):
    response = client.post("/api/fits", json=_config(run_dir))
    assert response.status_code == 202
    body = response.json()
    assert body["status"] == "queued"

    # the test client runs background tasks before returning
    detail = client.get(f"/api/fits/{body['run_id']}").json()
    assert detail["status"] == "done"
    assert detail["source"] == "api"
    assert detail["iterations"]["count"] >= 1
    assert detail["iterations"]["last_energy"] <= detail["iterations"]["first_energy"]
    assert detail["final_energy"] <= detail["iterations"]["last_energy"]

    iterations = client.get(f"/api/fits/{body['run_id']}/iterations").json()
    assert len(iterations) == detail["iterations"]["count"]
    assert [it["iteration"] for it in iterations] == sorted(it["iteration"] for it in iterations)
    assert set(iterations[0]["terms"]) >= {"landmarks"}


def test_list_filters_by_mode(run_dir):
    client.post("/api/fits", json=_config(run_dir))
    offline = client.get("/api/fits", params={"mode": "offline"}).json()
    assert offline and all(run["mode"] == "offline" for run in offline)
    assert client.get("/api/fits", params={"mode": "tracking", "limit": 5}).json() == []


def test_unknown_run_is_404():
    assert client.get("/api/fits/does-not-exist").status_code == 404
    assert client.get("/api/fits/does-not-exist/iterations").status_code == 404


def test_missing_inputs_are_rejected(tmp_path):
    response = client.post("/api/fits", json=_config(tmp_path / "empty"))
    assert response.status_code == 400
    assert "asset" in response.json()["detail"]


def test_invalid_config_is_422(run_dir):
    response = client.post("/api/fits", json=_config(run_dir, mode="sideways"))
    assert response.status_code == 422


def test_fit_failure_is_recorded(run_dir, tmp_path):
    # observations for 68 landmarks against an asset with 80
    other = RunConfig.model_validate(_config(tmp_path, asset={"landmark_count": 80, "identity_dims": 8,
                                                              "expression_dims": 10, "prior_components": 2}))
    asset_path, _ = cmd_synth_asset(other)
    data = _config(run_dir)
    data["paths"]["asset"] = str(asset_path)
    response = client.post("/api/fits", json=data)
    assert response.status_code == 202
    detail = client.get(f"/api/fits/{response.json()['run_id']}").json()
    assert detail["status"] == "failed"
    assert "observations" in detail["error"]


def test_unexpected_crash_marks_run_failed(run_dir, monkeypatch):
    def crash(config):
        raise RuntimeError("worker died")

    monkeypatch.setattr(fit_runner, "cmd_fit", crash)
    response = client.post("/api/fits", json=_config(run_dir))
    assert response.status_code == 202
    detail = client.get(f"/api/fits/{response.json()['run_id']}").json()
    assert detail["status"] == "failed"
    assert detail["error"] == "RuntimeError: worker died"
