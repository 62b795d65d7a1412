"""
Fit evaluation metrics
Vertex errors after rigid alignment, landmark reprojection error and
per-parameter-group errors.
"""
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel
from scipy.spatial.transform import Rotation

from .camera import CameraRig, project_points, visible
from .errors import ContractViolation
from .face_model import ModelAsset, Parameters, bind_mesh, mesh_generate
from .landmarks import ObservationSet


@dataclass(frozen=True, eq=False)
class RigidAlignment:
    """x -> rotation @ x + translation, mapping source onto target"""
    rotation: np.ndarray
    translation: np.ndarray
    aligned: np.ndarray


def rigid_align(source: np.ndarray, target: np.ndarray) -> RigidAlignment:
    """Closed-form orthogonal Procrustes (proper rotation, no scale) of source onto target"""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise ContractViolation(f"alignment needs matching (n, 3) arrays, got {source.shape} and {target.shape}")
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    with warnings.catch_warnings():
        # fewer than three non-collinear points leave the rotation under-determined
        warnings.simplefilter("ignore", UserWarning)
        rotation, _ = Rotation.align_vectors(target - mu_t, source - mu_s)
    R = rotation.as_matrix()
    t = mu_t - R @ mu_s
    return RigidAlignment(R, t, source @ R.T + t)


def vertex_rmse(predicted: np.ndarray, truth: np.ndarray) -> float:
    """sqrt(mean_i |p_i - t_i|^2)"""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise ContractViolation(f"vertex arrays differ in shape: {predicted.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean(np.sum((predicted - truth) ** 2, axis=-1))))


def aligned_vertex_rmse(predicted: np.ndarray, truth: np.ndarray) -> float:
    return vertex_rmse(rigid_align(predicted, truth).aligned, truth)


def reprojection_rmse(asset: ModelAsset, params: Parameters, rig: CameraRig, obs: ObservationSet) -> float:
    """RMS pixel distance between projected landmarks and observed means"""
    rig = rig.with_parameters(params.cam_rot, params.cam_trans, params.focal)
    sq = []
    for i in range(params.frames):
        points = mesh_generate(asset, params, i)[asset.landmark_vertices]
        for j in range(rig.count):
            sel = np.flatnonzero((obs.frame_idx == i) & (obs.camera_idx == j))
            if not sel.size:
                continue
            targets = points[obs.landmark_idx[sel]]
            ok = visible(rig, j, targets)
            pixels = project_points(rig, j, targets[ok])
            sq.append(np.sum((pixels - obs.mu[sel[ok]]) ** 2, axis=1))
    if not sq:
        return 0.0
    return float(np.sqrt(np.mean(np.concatenate(sq))))


def _rms(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(np.sqrt(np.mean(values ** 2))) if values.size else 0.0


def parameter_errors(fitted: Parameters, truth: Parameters) -> Dict[str, float]:
    """RMS error per parameter group; focal as mean relative error"""
    if fitted.frames != truth.frames or fitted.cameras != truth.cameras:
        raise ContractViolation("fitted and true parameters have different frame or camera counts")
    K3 = truth.theta.shape[1] - 3
    return {
        "identity": _rms(fitted.beta - truth.beta),
        "expression": _rms(fitted.psi - truth.psi),
        "pose_rotation": _rms(fitted.theta[:, :K3] - truth.theta[:, :K3]),
        "pose_translation": _rms(fitted.theta[:, K3:] - truth.theta[:, K3:]),
        "focal_relative": float(np.mean(np.abs(fitted.focal - truth.focal) / truth.focal)),
    }


class EvalMetrics(BaseModel):
    vertex_rmse: List[float]
    mean_vertex_rmse: float
    neutral_vertex_rmse: float
    reprojection_rmse: Optional[float] = None
    parameter_errors: Dict[str, float]


def evaluate_fit(
    asset: ModelAsset,
    fitted: Parameters,
    truth: Parameters,
    rig: Optional[CameraRig] = None,
    obs: Optional[ObservationSet] = None,
) -> EvalMetrics:
    """
    Posed per-frame vertex RMSE and identity-only neutral RMSE, both after
    rigid alignment, plus reprojection and parameter-group errors.
    """
    fitted.validate(asset)
    truth.validate(asset)
    per_frame = [
        aligned_vertex_rmse(mesh_generate(asset, fitted, i), mesh_generate(asset, truth, i))
        for i in range(truth.frames)
    ]
    zeros = np.zeros(asset.expression_dims)
    neutral = aligned_vertex_rmse(bind_mesh(asset, fitted.beta, zeros), bind_mesh(asset, truth.beta, zeros))
    reprojection = None
    if rig is not None and obs is not None:
        reprojection = reprojection_rmse(asset, fitted, rig, obs)
    return EvalMetrics(
        vertex_rmse=per_frame,
        mean_vertex_rmse=float(np.mean(per_frame)),
        neutral_vertex_rmse=neutral,
        reprojection_rmse=reprojection,
        parameter_errors=parameter_errors(fitted, truth),
    )
