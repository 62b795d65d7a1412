"""
Model-fitting energy as a residual system
Landmark data term plus identity, expression, joint, temporal and
intersection regularizers. Every residual block carries the static set of
parameters it can structurally depend on, so the solver only pays O(m_i^2)
per block when accumulating the normal equations.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .camera import CAMERA_PARAM_COUNT, CameraRig, project_points_jacobian, visible
from .errors import ContractViolation
from .face_model import ModelAsset, Parameters, VertexJacobian, joint_point, tracked_vertices, vertex_jacobian
from .landmarks import SIGMA_FLOOR, ObservationSet, whitened_residual
from .priors import GmmPrior, gmm_log_prob, gmm_residualize

logger = logging.getLogger(__name__)

TERMS = ("landmarks", "identity", "expression", "joints", "temporal", "intersect")
PARAMETER_GROUPS = ("identity", "expression", "pose", "camera", "extrinsics", "focal")


class TermWeights(BaseModel):
    landmarks: float = 1.0
    identity: float = Field(default=1.0, ge=0)
    expression: float = Field(default=0.1, ge=0)
    joints: float = Field(default=0.1, ge=0)
    temporal: float = Field(default=0.05, ge=0)
    intersect: float = Field(default=10.0, ge=0)

    @field_validator("landmarks")
    @classmethod
    def _landmarks_fixed(cls, value: float) -> float:
        if value != 1.0:
            raise ValueError("the landmark term weight is fixed to 1")
        return value

    @classmethod
    def data_only(cls) -> "TermWeights":
        return cls(identity=0.0, expression=0.0, joints=0.0, temporal=0.0, intersect=0.0)


class EnergyConfig(BaseModel):
    term_weights: TermWeights = Field(default_factory=TermWeights)
    sparsity_threshold: float = Field(default=0.0, ge=0)
    sigma_floor: float = Field(default=SIGMA_FLOOR, gt=0)
    temporal: bool = True
    intersect: bool = True
    # fitting without sigma replaces every observation's sigma by constant_sigma
    use_sigma: bool = True
    constant_sigma: float = Field(default=1.0, gt=0)


@dataclass(frozen=True)
class ParameterLayout:
    """Phi = [beta | Psi frame-major | Theta frame-major | camera blocks (rot, trans, focal)]"""
    identity_dims: int
    expression_dims: int
    pose_dims: int
    frames: int
    cameras: int

    @classmethod
    def for_problem(cls, asset: ModelAsset, frames: int, cameras: int) -> "ParameterLayout":
        return cls(asset.identity_dims, asset.expression_dims, asset.pose_dims, frames, cameras)

    @property
    def psi_start(self) -> int:
        return self.identity_dims

    @property
    def theta_start(self) -> int:
        return self.psi_start + self.frames * self.expression_dims

    @property
    def camera_start(self) -> int:
        return self.theta_start + self.frames * self.pose_dims

    @property
    def size(self) -> int:
        return self.camera_start + self.cameras * CAMERA_PARAM_COUNT

    def beta(self) -> np.ndarray:
        return np.arange(self.identity_dims)

    def psi(self, frame: int) -> np.ndarray:
        start = self.psi_start + frame * self.expression_dims
        return np.arange(start, start + self.expression_dims)

    def theta(self, frame: int) -> np.ndarray:
        start = self.theta_start + frame * self.pose_dims
        return np.arange(start, start + self.pose_dims)

    def camera(self, cam: int) -> np.ndarray:
        start = self.camera_start + cam * CAMERA_PARAM_COUNT
        return np.arange(start, start + CAMERA_PARAM_COUNT)

    def frame_columns(self, frame: int, cam: Optional[int] = None) -> np.ndarray:
        """Global indices of the per-frame local order [beta | psi_f | theta_f (| camera)]"""
        parts = [self.beta(), self.psi(frame), self.theta(frame)]
        if cam is not None:
            parts.append(self.camera(cam))
        return np.concatenate(parts)

    def group(self, name: str) -> np.ndarray:
        if name == "identity":
            return self.beta()
        if name == "expression":
            return np.arange(self.psi_start, self.theta_start)
        if name == "pose":
            return np.arange(self.theta_start, self.camera_start)
        if name == "camera":
            return np.arange(self.camera_start, self.size)
        if name == "extrinsics":
            return np.concatenate([self.camera(j)[:6] for j in range(self.cameras)])
        if name == "focal":
            return np.array([self.camera(j)[6] for j in range(self.cameras)])
        raise ContractViolation(f"unknown parameter group '{name}', expected one of {PARAMETER_GROUPS}")

    def pack(self, params: Parameters) -> np.ndarray:
        cams = np.hstack([params.cam_rot, params.cam_trans, params.focal[:, None]])
        return np.concatenate([params.beta, params.psi.ravel(), params.theta.ravel(), cams.ravel()])

    def unpack(self, x: np.ndarray) -> Parameters:
        if x.shape != (self.size,):
            raise ContractViolation(f"parameter vector has shape {x.shape}, expected ({self.size},)")
        cams = x[self.camera_start:].reshape(self.cameras, CAMERA_PARAM_COUNT)
        return Parameters(
            beta=x[: self.identity_dims].copy(),
            psi=x[self.psi_start: self.theta_start].reshape(self.frames, self.expression_dims).copy(),
            theta=x[self.theta_start: self.camera_start].reshape(self.frames, self.pose_dims).copy(),
            cam_rot=cams[:, 0:3].copy(),
            cam_trans=cams[:, 3:6].copy(),
            focal=cams[:, 6].copy(),
        )


def active_mask(layout: ParameterLayout, rig: CameraRig, fixed_groups: Iterable[str] = ()) -> np.ndarray:
    """
    Free parameters. A single camera keeps its extrinsics fixed (only focal is
    optimized); with several cameras camera 0's extrinsics anchor the gauge.
    Rig flags and `fixed_groups` freeze more.
    """
    mask = np.ones(layout.size, dtype=bool)
    for j in range(layout.cameras):
        cols = layout.camera(j)
        mask[cols[rig.fixed[j]]] = False
        if layout.cameras == 1 or j == 0:
            mask[cols[:6]] = False
    for name in fixed_groups:
        mask[layout.group(name)] = False
    return mask


@dataclass
class ResidualBlock:
    """
    One residual group. `columns` are the active global parameters the block's
    local Jacobian is laid out over; `static` marks the structural sparsity set
    (m_i) within them.
    """
    kind: str
    index: Tuple[int, ...]
    scale: float
    columns: np.ndarray
    static: np.ndarray
    residual: np.ndarray
    full_jacobian: np.ndarray

    @property
    def dim(self) -> int:
        return self.residual.shape[0]

    @property
    def params(self) -> np.ndarray:
        return self.columns[self.static]

    @property
    def jacobian(self) -> np.ndarray:
        return self.full_jacobian[:, self.static]

    @property
    def energy(self) -> float:
        return float(self.residual @ self.residual)


@dataclass
class ResidualSystem:
    layout: ParameterLayout
    active: np.ndarray
    blocks: List[ResidualBlock]
    identity_energy: float = 0.0
    dropped: int = 0
    _term_cache: Dict[str, float] = field(default_factory=dict, repr=False)

    @property
    def dimension(self) -> int:
        return sum(b.dim for b in self.blocks)

    def residual_vector(self) -> np.ndarray:
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([b.residual for b in self.blocks])

    def term_energies(self) -> Dict[str, float]:
        """Energy per term; the identity term is the exact -w log p(beta)"""
        if not self._term_cache:
            energies = {name: 0.0 for name in TERMS}
            for block in self.blocks:
                if block.kind != "identity":
                    energies[block.kind] += block.energy
            energies["identity"] = self.identity_energy
            self._term_cache.update(energies)
        return dict(self._term_cache)

    @property
    def total_energy(self) -> float:
        return float(sum(self.term_energies().values()))

    def dense_jacobian(self) -> np.ndarray:
        """Full Jacobian over active parameters, ignoring sparsity sets"""
        position = np.full(self.layout.size, -1)
        position[self.active] = np.arange(int(self.active.sum()))
        J = np.zeros((self.dimension, int(self.active.sum())))
        row = 0
        for block in self.blocks:
            J[row: row + block.dim, position[block.columns]] += block.full_jacobian
            row += block.dim
        return J


@lru_cache(maxsize=16)
def vertex_supports(asset: ModelAsset) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Structural reachability per vertex: which beta, psi and theta entries can
    move it (blendshape column support, skinning support, kinematic chain).
    """
    N, K = asset.vertex_count, asset.joint_count
    beta_mask = np.any(asset.identity_basis != 0, axis=1)
    psi_mask = np.any(asset.expression_basis != 0, axis=1)
    joint_beta = np.any(asset.joint_identity_basis != 0, axis=1)
    theta_mask = np.zeros((N, asset.pose_dims), dtype=bool)
    theta_mask[:, 3 * K:] = True
    for k in range(K):
        chain = asset.ancestors(k)
        skinned = asset.skinning_weights[k] > 0
        for m in chain:
            theta_mask[np.ix_(skinned, np.arange(3 * m, 3 * m + 3))] = True
            beta_mask[skinned] |= joint_beta[m]
    return beta_mask, psi_mask, theta_mask


def joint_support(asset: ModelAsset, joint: int) -> Tuple[np.ndarray, np.ndarray]:
    """beta and theta entries that can move a point attached to `joint`"""
    beta_mask = np.zeros(asset.identity_dims, dtype=bool)
    theta_mask = np.zeros(asset.pose_dims, dtype=bool)
    theta_mask[3 * asset.joint_count:] = True
    joint_beta = np.any(asset.joint_identity_basis != 0, axis=1)
    for m in asset.ancestors(joint):
        theta_mask[3 * m: 3 * m + 3] = True
        beta_mask |= joint_beta[m]
    return beta_mask, theta_mask


class FrameStates:
    """Per-frame posed positions and derivatives of every vertex the energy touches"""

    def __init__(self, asset: ModelAsset, params: Parameters):
        self.asset = asset
        self.params = params
        self.vertex_ids = tracked_vertices(asset)
        self._states: Dict[int, VertexJacobian] = {}

    def __getitem__(self, frame: int) -> VertexJacobian:
        if frame not in self._states:
            self._states[frame] = vertex_jacobian(self.asset, self.params, frame, self.vertex_ids)
        return self._states[frame]

    def rows(self, vertices: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.vertex_ids, vertices)


def _frame_local_masks(asset: ModelAsset, vertex: int) -> np.ndarray:
    beta_mask, psi_mask, theta_mask = vertex_supports(asset)
    return np.concatenate([beta_mask[vertex], psi_mask[vertex], theta_mask[vertex]])


def _make_block(kind, index, scale, columns, static, residual, jacobian, active) -> ResidualBlock:
    keep = active[columns]
    return ResidualBlock(
        kind=kind,
        index=tuple(int(i) for i in index),
        scale=float(scale),
        columns=columns[keep],
        static=static[keep],
        residual=residual,
        full_jacobian=jacobian[:, keep],
    )


def _rig_for(rig: CameraRig, params: Parameters) -> CameraRig:
    if params.cameras != rig.count:
        raise ContractViolation(f"parameters describe {params.cameras} cameras, rig has {rig.count}")
    return rig.with_parameters(params.cam_rot, params.cam_trans, params.focal)


def _resolve(asset, params, layout, active, states):
    if layout is None:
        layout = ParameterLayout.for_problem(asset, params.frames, params.cameras)
    if active is None:
        active = np.ones(layout.size, dtype=bool)
    if states is None:
        states = FrameStates(asset, params)
    return layout, active, states


def residual_landmarks(
    asset: ModelAsset,
    params: Parameters,
    rig: CameraRig,
    obs: ObservationSet,
    config: Optional[EnergyConfig] = None,
    layout: Optional[ParameterLayout] = None,
    active: Optional[np.ndarray] = None,
    states: Optional[FrameStates] = None,
) -> Tuple[List[ResidualBlock], int]:
    """
    One 2-vector block per observation, sqrt(lambda_k) (x - mu) / (sqrt(2) sigma).
    Returns the blocks and the number of behind-camera observations dropped.
    """
    config = config or EnergyConfig()
    layout, active, states = _resolve(asset, params, layout, active, states)
    rig = _rig_for(rig, params)
    if obs.frames != params.frames or obs.cameras != rig.count or obs.landmarks != asset.landmark_count:
        raise ContractViolation(
            f"observations are {obs.frames}x{obs.cameras}x{obs.landmarks} (F x C x |L|), problem is "
            f"{params.frames}x{rig.count}x{asset.landmark_count}"
        )
    sigma = obs.sigma if config.use_sigma else np.full(len(obs), config.constant_sigma)
    sigma = np.maximum(sigma, config.sigma_floor)
    blocks: List[ResidualBlock] = []
    dropped = 0
    for i in range(params.frames):
        state = states[i]
        for j in range(rig.count):
            sel = np.flatnonzero((obs.frame_idx == i) & (obs.camera_idx == j))
            if not sel.size:
                continue
            vertices = asset.landmark_vertices[obs.landmark_idx[sel]]
            rows = states.rows(vertices)
            points = state.positions[rows]
            ok = visible(rig, j, points)
            if not ok.all():
                dropped += int((~ok).sum())
                logger.warning("Frame %d camera %d: %d landmark(s) behind camera excluded", i, j, int((~ok).sum()))
                sel, rows, points, vertices = sel[ok], rows[ok], points[ok], vertices[ok]
                if not sel.size:
                    continue
            proj = project_points_jacobian(rig, j, points)
            scale = np.sqrt(asset.landmark_weights[obs.landmark_idx[sel]])
            residuals = scale[:, None] * whitened_residual(proj.pixels, obs.mu[sel], sigma[sel])
            local = np.concatenate([proj.d_point @ state.dense()[rows], proj.d_camera], axis=2)
            local *= (scale / (np.sqrt(2.0) * sigma[sel]))[:, None, None]
            columns = layout.frame_columns(i, j)
            for n, obs_id in enumerate(sel):
                static = np.concatenate([_frame_local_masks(asset, vertices[n]), np.ones(CAMERA_PARAM_COUNT, dtype=bool)])
                blocks.append(_make_block(
                    "landmarks", (i, j, obs.landmark_idx[obs_id]), scale[n] / (np.sqrt(2.0) * sigma[obs_id]),
                    columns, static, residuals[n], local[n], active,
                ))
    return blocks, dropped


def residual_expression(
    params: Parameters,
    weight: float,
    layout: ParameterLayout,
    active: Optional[np.ndarray] = None,
) -> List[ResidualBlock]:
    """Per frame sqrt(w) psi_i"""
    active = np.ones(layout.size, dtype=bool) if active is None else active
    root = np.sqrt(weight)
    blocks = []
    for i in range(params.frames):
        columns = layout.psi(i)
        blocks.append(_make_block(
            "expression", (i,), root, columns, np.ones(len(columns), dtype=bool),
            root * params.psi[i], root * np.eye(len(columns)), active,
        ))
    return blocks


def residual_joints(
    params: Parameters,
    weight: float,
    layout: ParameterLayout,
    active: Optional[np.ndarray] = None,
) -> List[ResidualBlock]:
    """Per frame sqrt(w) times the non-root joint rotations; root rotation and translation excluded"""
    active = np.ones(layout.size, dtype=bool) if active is None else active
    root = np.sqrt(weight)
    K = (layout.pose_dims - 3) // 3
    blocks = []
    for i in range(params.frames):
        columns = layout.theta(i)[3: 3 * K]
        blocks.append(_make_block(
            "joints", (i,), root, columns, np.ones(len(columns), dtype=bool),
            root * params.theta[i, 3: 3 * K], root * np.eye(len(columns)), active,
        ))
    return blocks


def residual_temporal(
    asset: ModelAsset,
    params: Parameters,
    rig: CameraRig,
    weight: float,
    layout: Optional[ParameterLayout] = None,
    active: Optional[np.ndarray] = None,
    states: Optional[FrameStates] = None,
) -> List[ResidualBlock]:
    """Per (frame >= 2, camera, landmark) sqrt(w) (x_i - x_{i-1}) in image space"""
    layout, active, states = _resolve(asset, params, layout, active, states)
    rig = _rig_for(rig, params)
    root = np.sqrt(weight)
    nb, ne, P = asset.identity_dims, asset.expression_dims, asset.pose_dims
    rows = states.rows(asset.landmark_vertices)
    blocks: List[ResidualBlock] = []
    for i in range(1, params.frames):
        now, before = states[i], states[i - 1]
        for j in range(rig.count):
            p_now, p_before = now.positions[rows], before.positions[rows]
            ok = visible(rig, j, p_now) & visible(rig, j, p_before)
            if not ok.all():
                logger.warning("Frame %d camera %d: %d temporal term(s) behind camera excluded", i, j, int((~ok).sum()))
            if not ok.any():
                continue
            keep = np.flatnonzero(ok)
            a = project_points_jacobian(rig, j, p_now[keep])
            b = project_points_jacobian(rig, j, p_before[keep])
            Ja = a.d_point @ now.dense()[rows[keep]]
            Jb = b.d_point @ before.dense()[rows[keep]]
            local = np.concatenate([
                Ja[:, :, :nb] - Jb[:, :, :nb],
                Ja[:, :, nb:], -Jb[:, :, nb:],
                a.d_camera - b.d_camera,
            ], axis=2) * root
            columns = np.concatenate([
                layout.beta(), layout.psi(i), layout.theta(i),
                layout.psi(i - 1), layout.theta(i - 1), layout.camera(j),
            ])
            residuals = root * (a.pixels - b.pixels)
            for n, k in enumerate(keep):
                m = _frame_local_masks(asset, asset.landmark_vertices[k])
                static = np.concatenate([m, m[nb:], np.ones(CAMERA_PARAM_COUNT, dtype=bool)])
                blocks.append(_make_block("temporal", (i, j, k), root, columns, static, residuals[n], local[n], active))
    return blocks


def hull_depth(normals: np.ndarray, offsets: np.ndarray, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    D_i = min_j d_ij with d_ij = -min(n_j . x_i + p_j, 0): how far each point
    lies inside the hull (0 outside or on the boundary), and the arg-min plane.
    """
    signed = np.atleast_2d(points) @ normals.T + offsets
    d = -np.minimum(signed, 0.0)
    plane = np.argmin(d, axis=1)
    return d[np.arange(len(d)), plane], plane


def residual_intersect(
    asset: ModelAsset,
    params: Parameters,
    weight: float,
    layout: Optional[ParameterLayout] = None,
    active: Optional[np.ndarray] = None,
    states: Optional[FrameStates] = None,
) -> List[ResidualBlock]:
    """
    Eyeballs: sqrt(w) (radius - |x - c|) for guarded eyelid vertices inside
    their sphere. Teeth: sqrt(w) D_i for each lip vertex against each hull,
    evaluated in the hull joint's local frame. Zero residual outside.
    """
    layout, active, states = _resolve(asset, params, layout, active, states)
    root = np.sqrt(weight)
    nb, ne = asset.identity_dims, asset.expression_dims
    blocks: List[ResidualBlock] = []
    for i in range(params.frames):
        state = states[i]
        columns = layout.frame_columns(i)
        dense = state.dense()
        transforms = state.transforms
        for e, eye in enumerate(asset.eyeballs):
            center, c_beta, c_theta = joint_point(asset, params, i, eye.joint, eye.center_offset, transforms)
            j_beta, j_theta = joint_support(asset, eye.joint)
            joint_static = np.concatenate([j_beta, np.zeros(ne, dtype=bool), j_theta])
            center_jac = np.concatenate([c_beta, np.zeros((3, ne)), c_theta], axis=1)
            for v in eye.guarded_vertices:
                row = states.rows(np.array([v]))[0]
                offset = state.positions[row] - center
                dist = float(np.linalg.norm(offset))
                residual = np.zeros(1)
                jac = np.zeros((1, len(columns)))
                if dist < eye.radius:
                    residual[0] = root * (eye.radius - dist)
                    if dist > 0:
                        jac[0] = -root * (offset / dist) @ (dense[row] - center_jac)
                static = _frame_local_masks(asset, v) | joint_static
                blocks.append(_make_block("intersect", (i, 0, e, v), root, columns, static, residual, jac, active))

        joints_now = None
        for h, hull in enumerate(asset.teeth_hulls):
            k = hull.joint
            A, b = transforms.A[k], transforms.b[k]
            if joints_now is None:
                joints_now = asset.base_joints + asset.joint_identity_basis @ params.beta
            j_beta, j_theta = joint_support(asset, k)
            joint_static = np.concatenate([j_beta, np.zeros(ne, dtype=bool), j_theta])
            for v in asset.lip_vertices:
                row = states.rows(np.array([v]))[0]
                x = state.positions[row]
                local_point = A.T @ (x - b) - joints_now[k]
                depth, plane = hull_depth(hull.normals, hull.offsets, local_point)
                residual = np.zeros(1)
                jac = np.zeros((1, len(columns)))
                if depth[0] > 0:
                    n = hull.normals[plane[0]]
                    residual[0] = root * depth[0]
                    d_local = A.T @ dense[row]
                    d_local[:, :nb] -= A.T @ transforms.db_dbeta[k] + asset.joint_identity_basis[k]
                    d_local[:, nb + ne:] += (
                        np.einsum("pji,j->ip", transforms.dA[:, k], x - b) - A.T @ transforms.db[:, k].T
                    )
                    jac[0] = -root * (n @ d_local)
                static = _frame_local_masks(asset, v) | joint_static
                blocks.append(_make_block("intersect", (i, 1, h, v), root, columns, static, residual, jac, active))
    return blocks


def residual_identity(
    prior: GmmPrior,
    params: Parameters,
    weight: float,
    layout: ParameterLayout,
    active: Optional[np.ndarray] = None,
) -> Tuple[List[ResidualBlock], float]:
    """
    Dominant-component whitened block scaled by sqrt(w/2), so its squared norm
    is w times half the Mahalanobis distance; returns the exact -w log p(beta)
    alongside.
    """
    active = np.ones(layout.size, dtype=bool) if active is None else active
    scale = np.sqrt(weight / 2.0)
    res = gmm_residualize(prior, params.beta, scale)
    columns = layout.beta()
    block = _make_block("identity", (res.component,), scale, columns, np.ones(len(columns), dtype=bool),
                        res.residual, res.jacobian, active)
    return [block], -weight * gmm_log_prob(prior, params.beta)


def assemble(
    asset: ModelAsset,
    params: Parameters,
    rig: CameraRig,
    obs: ObservationSet,
    prior: Optional[GmmPrior],
    config: EnergyConfig,
    active: Optional[np.ndarray] = None,
) -> ResidualSystem:
    """Evaluate every enabled term into one residual system"""
    params.validate(asset)
    layout = ParameterLayout.for_problem(asset, params.frames, params.cameras)
    if active is None:
        active = active_mask(layout, rig)
    if active.shape != (layout.size,):
        raise ContractViolation(f"active mask has shape {active.shape}, expected ({layout.size},)")
    weights = config.term_weights
    states = FrameStates(asset, params)

    blocks, dropped = residual_landmarks(asset, params, rig, obs, config, layout, active, states)
    identity_energy = 0.0
    if prior is not None and weights.identity > 0:
        if prior.dims != asset.identity_dims:
            raise ContractViolation(f"identity block: prior has {prior.dims} dims, asset {asset.identity_dims}")
        identity_blocks, identity_energy = residual_identity(prior, params, weights.identity, layout, active)
        blocks.extend(identity_blocks)
    if weights.expression > 0:
        blocks.extend(residual_expression(params, weights.expression, layout, active))
    if weights.joints > 0:
        blocks.extend(residual_joints(params, weights.joints, layout, active))
    if config.temporal and weights.temporal > 0 and params.frames > 1:
        blocks.extend(residual_temporal(asset, params, rig, weights.temporal, layout, active, states))
    if config.intersect and weights.intersect > 0 and (asset.eyeballs or asset.teeth_hulls):
        blocks.extend(residual_intersect(asset, params, weights.intersect, layout, active, states))
    return ResidualSystem(layout=layout, active=active, blocks=blocks, identity_energy=identity_energy, dropped=dropped)


def system_jacobian(system: ResidualSystem, config: EnergyConfig) -> List[np.ndarray]:
    """
    Per-block Jacobians restricted to each block's static set, with entries
    below the sparsity threshold zeroed so they drop out of accumulation.
    """
    eps = config.sparsity_threshold
    out = []
    for block in system.blocks:
        jac = block.jacobian
        if eps > 0:
            jac = np.where(np.abs(jac) < eps, 0.0, jac)
        out.append(jac)
    return out


def energy_terms(
    asset: ModelAsset,
    params: Parameters,
    rig: CameraRig,
    obs: ObservationSet,
    prior: Optional[GmmPrior],
    config: EnergyConfig,
) -> Dict[str, float]:
    """Energy per term, evaluated term by term"""
    return assemble(asset, params, rig, obs, prior, config).term_energies()
