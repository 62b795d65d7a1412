"""
Pipeline commands
Synthesis, fitting, evaluation and benchmarking on top of the library; the
command line and the fit service are thin wrappers around these.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .artifacts import (
    export_obj,
    load_asset,
    load_observations,
    load_parameters,
    load_prior,
    save_asset,
    save_document,
    save_observations,
    save_parameters,
    save_prior,
    write_csv,
)
from .camera import CameraConfig, CameraRig, build_rig, ring_cameras
from .energy import EnergyConfig
from .errors import ContractViolation
from .face_model import ModelAsset, Parameters, mesh_generate
from .landmarks import NoiseSpec, ObservationSet, synth_observe
from .metrics import EvalMetrics, evaluate_fit, parameter_errors
from .priors import GmmPrior, sample_gmm, synth_identity_prior
from .run_config import InitConfig, RunConfig, SceneConfig
from .seeding import stream
from .solver import SolveOptions, SolveReport, fit
from .toy_asset import synth_toy_asset

logger = logging.getLogger(__name__)

ABLATIONS = ("sigma", "landmarks", "views")


@dataclass
class Scene:
    asset: ModelAsset
    truth: Parameters
    rig: CameraRig
    obs: ObservationSet


@dataclass
class FitOutcome:
    params: Parameters
    report: SolveReport
    params_path: Path
    report_path: Path
    mesh_paths: List[Path] = field(default_factory=list)


def rig_parameters(rig: CameraRig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return rig.rotations.copy(), rig.translations.copy(), rig.focals.copy()


def sample_truth(
    asset: ModelAsset,
    prior: Optional[GmmPrior],
    scene: SceneConfig,
    rig: CameraRig,
    seed: int,
) -> Parameters:
    """Ground-truth parameters: beta from the prior, expression and pose from bounded ranges"""
    rng = stream(seed, "params")
    K = asset.joint_count
    beta = sample_gmm(prior, rng, 1)[0] if prior is not None else rng.normal(scale=0.5, size=asset.identity_dims)

    def pose_sample() -> np.ndarray:
        theta = np.zeros(asset.pose_dims)
        theta[0:3] = rng.uniform(-scene.root_rotation_range, scene.root_rotation_range, size=3)
        theta[3: 3 * K] = rng.uniform(-scene.joint_rotation_range, scene.joint_rotation_range, size=3 * K - 3)
        theta[3 * K:] = rng.uniform(-scene.translation_range, scene.translation_range, size=3)
        theta[3 * K + 2] += scene.head_distance
        return theta

    psi_ends = rng.uniform(-scene.expression_range, scene.expression_range, size=(2, asset.expression_dims))
    theta_ends = np.stack([pose_sample(), pose_sample()])
    alpha = np.linspace(0.0, 1.0, scene.frames)[:, None] if scene.frames > 1 else np.zeros((1, 1))
    rot, trans, focal = rig_parameters(rig)
    return Parameters(
        beta=beta,
        psi=(1 - alpha) * psi_ends[0] + alpha * psi_ends[1],
        theta=(1 - alpha) * theta_ends[0] + alpha * theta_ends[1],
        cam_rot=rot,
        cam_trans=trans,
        focal=focal,
    )


def initial_parameters(
    asset: ModelAsset,
    rig: CameraRig,
    frames: int,
    init: InitConfig,
    scene: SceneConfig,
    seed: int,
    truth: Optional[Parameters] = None,
) -> Parameters:
    """Solver starting point; cameras always start from the rig as configured"""
    rot, trans, focal = rig_parameters(rig)
    if init.kind == "perturbed":
        if truth is None:
            raise ContractViolation("perturbed initialization needs ground-truth parameters")
        rng = stream(seed, "init")
        K = asset.joint_count
        theta = truth.theta.copy()
        theta[:, : 3 * K] += rng.normal(scale=init.rotation_noise, size=(truth.frames, 3 * K))
        theta[:, 3 * K:] += rng.normal(scale=init.translation_noise, size=(truth.frames, 3))
        return truth.copy(
            beta=truth.beta + rng.normal(scale=init.shape_noise, size=truth.beta.shape),
            psi=truth.psi + rng.normal(scale=init.shape_noise, size=truth.psi.shape),
            theta=theta,
            cam_rot=rot, cam_trans=trans, focal=focal,
        )
    theta = np.zeros((frames, asset.pose_dims))
    theta[:, -1] = scene.head_distance
    return Parameters(
        beta=np.zeros(asset.identity_dims),
        psi=np.zeros((frames, asset.expression_dims)),
        theta=theta,
        cam_rot=rot, cam_trans=trans, focal=focal,
    )


def synthesize_scene(
    asset: ModelAsset,
    prior: Optional[GmmPrior],
    cameras: List[CameraConfig],
    scene: SceneConfig,
    seed: int,
    noise: Optional[NoiseSpec] = None,
) -> Scene:
    rig = build_rig(cameras)
    truth = sample_truth(asset, prior, scene, rig, seed)
    obs = synth_observe(asset, truth, rig, noise or scene.noise, seed)
    return Scene(asset, truth, rig, obs)


def _load_prior_if_any(config: RunConfig) -> Optional[GmmPrior]:
    path = config.paths.resolve("prior")
    if config.paths.prior is None and not path.is_file():
        if config.energy.term_weights.identity > 0:
            logger.warning("No identity prior at %s, fitting without the identity term", path)
        return None
    return load_prior(path)


def cmd_synth_asset(config: RunConfig) -> Tuple[Path, Path]:
    """Toy asset plus an EM-fitted identity prior, both deterministic in the seed"""
    dims = config.asset
    asset = synth_toy_asset(
        config.seed,
        vertex_count=dims.vertex_count,
        identity_dims=dims.identity_dims,
        expression_dims=dims.expression_dims,
        landmark_count=dims.landmark_count,
    )
    prior = synth_identity_prior(config.seed, dims.identity_dims, components=dims.prior_components)
    resolved = config.resolved()
    asset_path = save_asset(config.paths.resolve("asset"), asset, config.seed, resolved)
    prior_path = save_prior(config.paths.resolve("prior"), prior, config.seed, resolved)
    return asset_path, prior_path


def cmd_synth_obs(config: RunConfig) -> Tuple[Path, Path]:
    asset = load_asset(config.paths.resolve("asset"))
    prior = _load_prior_if_any(config)
    scene = synthesize_scene(asset, prior, config.rig.cameras, config.scene, config.seed)
    resolved = config.resolved()
    obs_path = save_observations(config.paths.resolve("observations"), scene.obs, resolved, config.seed)
    truth_path = save_parameters(config.paths.resolve("truth"), scene.truth, resolved, config.seed)
    return obs_path, truth_path


def cmd_fit(config: RunConfig) -> FitOutcome:
    asset = load_asset(config.paths.resolve("asset"))
    prior = _load_prior_if_any(config)
    obs = load_observations(config.paths.resolve("observations"))
    rig = build_rig(config.rig.cameras)
    truth = None
    if config.init.kind == "perturbed":
        truth = load_parameters(config.paths.resolve("truth"))
    init = initial_parameters(asset, rig, obs.frames, config.init, config.scene, config.seed, truth)
    params, report = fit(asset, obs, rig, prior, config.energy, config.solve, init)

    resolved = config.resolved()
    out = Path(config.paths.output_dir)
    params_path = save_parameters(config.paths.resolve("fit"), params, resolved, config.seed,
                                  extra={"termination_reason": report.termination_reason})
    report_path = save_document(out / "report.json", "solve_report", report, resolved, config.seed)
    meshes = []
    if config.export_meshes:
        for i in range(params.frames):
            meshes.append(export_obj(out / "meshes" / f"frame_{i:03d}.obj", mesh_generate(asset, params, i), asset.faces))
    return FitOutcome(params, report, params_path, report_path, meshes)


def cmd_eval(config: RunConfig) -> Tuple[EvalMetrics, Path]:
    asset = load_asset(config.paths.resolve("asset"))
    fitted = load_parameters(config.paths.resolve("fit"))
    truth = load_parameters(config.paths.resolve("truth"))
    obs_path = config.paths.resolve("observations")
    obs = load_observations(obs_path) if obs_path.is_file() else None
    rig = build_rig(config.rig.cameras) if obs is not None else None
    metrics = evaluate_fit(asset, fitted, truth, rig, obs)
    path = save_document(Path(config.paths.output_dir) / "metrics.json", "metrics", metrics,
                         config.resolved(), config.seed)
    logger.info("Mean vertex RMSE %.6g, neutral %.6g", metrics.mean_vertex_rmse, metrics.neutral_vertex_rmse)
    return metrics, path


def _toy_asset(config: RunConfig, landmark_count: Optional[int] = None) -> ModelAsset:
    dims = config.asset
    return synth_toy_asset(
        config.seed,
        vertex_count=dims.vertex_count,
        identity_dims=dims.identity_dims,
        expression_dims=dims.expression_dims,
        landmark_count=landmark_count or dims.landmark_count,
    )


def _timing_row(report: SolveReport) -> Dict[str, float]:
    iterations = max(report.iteration_count, 1)
    row = {phase: seconds for phase, seconds in report.timings.items()}
    row.update({f"{phase}_per_iteration": seconds / iterations for phase, seconds in report.timings.items()})
    row["phase_sum"] = float(sum(report.timings.values()))
    row["total"] = report.total_time
    row["total_per_iteration"] = report.total_time / iterations
    row["frame_mean"] = float(np.mean(report.frame_times)) if report.frame_times else report.total_time
    return row


def bench_options(config: RunConfig) -> SolveOptions:
    """Solver options that run exactly `bench.iterations` LM iterations per solve"""
    tiny = float(np.finfo(np.float64).tiny)
    return config.solve.model_copy(update={
        "max_iterations": config.bench.iterations,
        "gradient_tolerance": tiny,
        "energy_tolerance": tiny,
        "step_tolerance": tiny,
    })


def run_bench(config: RunConfig) -> List[Dict[str, object]]:
    """Per-phase solver timings over landmark counts and sparsity thresholds"""
    prior = synth_identity_prior(config.seed, config.asset.identity_dims, components=config.asset.prior_components)
    options = bench_options(config)
    rows = []
    for count in config.bench.landmark_counts:
        asset = _toy_asset(config, count)
        for eps in config.bench.thresholds:
            energy = config.energy.model_copy(update={"sparsity_threshold": eps})
            for rep in range(config.bench.repetitions):
                seed = config.seed + rep
                scene = synthesize_scene(asset, prior, config.rig.cameras, config.scene, seed)
                init = initial_parameters(asset, scene.rig, scene.truth.frames, InitConfig(kind="perturbed"),
                                          config.scene, seed, scene.truth)
                _, report = fit(asset, scene.obs, scene.rig, prior, energy, options, init)
                row = {"landmarks": count, "epsilon": eps, "repetition": rep, "seed": seed,
                       "mode": config.mode, "iterations": report.iteration_count,
                       "final_energy": report.final_energy}
                row.update(_timing_row(report))
                rows.append(row)
                logger.info("bench |L|=%d eps=%g rep=%d: %.4fs", count, eps, rep, report.total_time)
    return rows


def _fit_scene(asset, prior, scene: Scene, energy: EnergyConfig, options: SolveOptions,
               config: RunConfig, seed: int) -> Parameters:
    init = initial_parameters(asset, scene.rig, scene.truth.frames, config.init, config.scene, seed, scene.truth)
    params, _ = fit(asset, scene.obs, scene.rig, prior, energy, options, init)
    return params


def ablate_sigma(config: RunConfig) -> List[Dict[str, object]]:
    """Fit each trial with the observed sigma and with a constant sigma"""
    asset = _toy_asset(config)
    prior = synth_identity_prior(config.seed, config.asset.identity_dims, components=config.asset.prior_components)
    rows = []
    for t in range(config.bench.trials):
        seed = config.seed + t
        scene = synthesize_scene(asset, prior, config.rig.cameras, config.scene, seed)
        constant = float(np.exp(np.mean(np.log(scene.obs.sigma))))
        with_sigma = _fit_scene(asset, prior, scene, config.energy, config.solve, config, seed)
        without = config.energy.model_copy(update={"use_sigma": False, "constant_sigma": constant})
        without_sigma = _fit_scene(asset, prior, scene, without, config.solve, config, seed)
        a = evaluate_fit(asset, with_sigma, scene.truth).mean_vertex_rmse
        b = evaluate_fit(asset, without_sigma, scene.truth).mean_vertex_rmse
        rows.append({"trial": t, "seed": seed, "with_sigma": a, "without_sigma": b, "sigma_better": a < b})
    return rows


def ablate_landmarks(config: RunConfig) -> List[Dict[str, object]]:
    """Vertex error per trial across landmark counts at a fixed noise level"""
    prior = synth_identity_prior(config.seed, config.asset.identity_dims, components=config.asset.prior_components)
    assets = {count: _toy_asset(config, count) for count in config.bench.landmark_counts}
    rows = []
    for t in range(config.bench.trials):
        seed = config.seed + t
        row: Dict[str, object] = {"trial": t, "seed": seed}
        for count, asset in assets.items():
            scene = synthesize_scene(asset, prior, config.rig.cameras, config.scene, seed)
            params = _fit_scene(asset, prior, scene, config.energy, config.solve, config, seed)
            row[f"landmarks_{count}"] = evaluate_fit(asset, params, scene.truth).mean_vertex_rmse
        rows.append(row)
    return rows


def ablate_views(config: RunConfig) -> List[Dict[str, object]]:
    """Identity error of a joint multi-view fit against independent single-view fits"""
    asset = _toy_asset(config)
    prior = synth_identity_prior(config.seed, config.asset.identity_dims, components=config.asset.prior_components)
    cameras = ring_cameras(config.bench.views, distance=config.scene.head_distance)
    rows = []
    for t in range(config.bench.trials):
        seed = config.seed + t
        scene = synthesize_scene(asset, prior, cameras, config.scene, seed)
        joint = _fit_scene(asset, prior, scene, config.energy, config.solve, config, seed)
        joint_error = parameter_errors(joint, scene.truth)["identity"]
        single_errors = []
        for j, cam in enumerate(cameras):
            rig = build_rig([cam])
            truth = scene.truth.copy(cam_rot=scene.truth.cam_rot[j: j + 1], cam_trans=scene.truth.cam_trans[j: j + 1],
                                     focal=scene.truth.focal[j: j + 1])
            single = Scene(asset, truth, rig, scene.obs.for_camera(j))
            params = _fit_scene(asset, prior, single, config.energy, config.solve, config, seed)
            single_errors.append(parameter_errors(params, truth)["identity"])
        rows.append({"trial": t, "seed": seed, "multi_view": joint_error,
                     "single_view_mean": float(np.mean(single_errors))})
    return rows


def cmd_bench(config: RunConfig, ablation: Optional[str] = None) -> Path:
    out = Path(config.paths.output_dir)
    if ablation is None:
        return write_csv(out / "bench.csv", run_bench(config), config.resolved())
    runners = {"sigma": ablate_sigma, "landmarks": ablate_landmarks, "views": ablate_views}
    if ablation not in runners:
        raise ContractViolation(f"unknown ablation '{ablation}', expected one of {ABLATIONS}")
    return write_csv(out / f"ablation_{ablation}.csv", runners[ablation](config), config.resolved())
