"""
Rigged blendshape head model
Linear identity/expression blendshapes, a linear joint regressor and linear
blend skinning, with analytic derivatives through all three.
"""
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import AssetError, ContractViolation
from .rotation import rotvec_derivatives, rotvec_to_matrix

ROOT_PARENT = -1
MAX_INFLUENCES = 4


@dataclass(frozen=True, eq=False)
class EyeballProxy:
    """Sphere attached to an eye joint guarding a set of eyelid vertices"""
    joint: int
    center_offset: np.ndarray
    radius: float
    guarded_vertices: np.ndarray


@dataclass(frozen=True, eq=False)
class TeethHull:
    """Convex hull of planes n.x + p <= 0, in the attachment joint's local frame"""
    joint: int
    normals: np.ndarray
    offsets: np.ndarray


@dataclass(frozen=True, eq=False)
class ModelAsset:
    """
    The rigged head. Blendshape bases are stored vertex-major as (N, 3, dims),
    which is the |dims| -> 3N linear map with rows grouped per vertex.
    """
    base_vertices: np.ndarray
    identity_basis: np.ndarray
    expression_basis: np.ndarray
    joint_parents: np.ndarray
    base_joints: np.ndarray
    joint_identity_basis: np.ndarray
    skinning_weights: np.ndarray
    landmark_vertices: np.ndarray
    landmark_weights: np.ndarray
    eyeballs: Tuple[EyeballProxy, ...] = ()
    teeth_hulls: Tuple[TeethHull, ...] = ()
    lip_vertices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    joint_names: Tuple[str, ...] = ()

    def __post_init__(self):
        validate_asset(self)

    @property
    def vertex_count(self) -> int:
        return self.base_vertices.shape[0]

    @property
    def joint_count(self) -> int:
        return self.base_joints.shape[0]

    @property
    def identity_dims(self) -> int:
        return self.identity_basis.shape[2]

    @property
    def expression_dims(self) -> int:
        return self.expression_basis.shape[2]

    @property
    def pose_dims(self) -> int:
        return 3 * self.joint_count + 3

    @property
    def landmark_count(self) -> int:
        return self.landmark_vertices.shape[0]

    def ancestors(self, joint: int) -> Tuple[int, ...]:
        """The joint itself followed by its chain up to the root"""
        chain = []
        while joint != ROOT_PARENT:
            chain.append(joint)
            joint = int(self.joint_parents[joint])
        return tuple(chain)

    def with_landmarks(self, vertices: Sequence[int], weights: Optional[Sequence[float]] = None) -> "ModelAsset":
        vertices = np.asarray(vertices, dtype=np.int64)
        if weights is None:
            weights = np.ones(len(vertices))
        return replace(self, landmark_vertices=vertices, landmark_weights=np.asarray(weights, dtype=np.float64))


def validate_asset(asset: ModelAsset) -> None:
    """Check every structural invariant, raising AssetError on the first failure"""
    V = asset.base_vertices
    if V.ndim != 2 or V.shape[1] != 3:
        raise AssetError(f"base_vertices must be (N, 3), got {V.shape}")
    N = V.shape[0]
    K = asset.base_joints.shape[0]
    for name in ("identity_basis", "expression_basis"):
        basis = getattr(asset, name)
        if basis.ndim != 3 or basis.shape[:2] != (N, 3):
            raise AssetError(f"{name} must be (N={N}, 3, dims), got {basis.shape}")
    nb = asset.identity_basis.shape[2]
    if asset.joint_identity_basis.shape != (K, 3, nb):
        raise AssetError(f"joint_identity_basis must be ({K}, 3, {nb}), got {asset.joint_identity_basis.shape}")
    if asset.joint_parents.shape != (K,):
        raise AssetError(f"joint_parents must have {K} entries")
    roots = [k for k in range(K) if asset.joint_parents[k] == ROOT_PARENT]
    if roots != [0]:
        raise AssetError(f"joint forest must have exactly one root at index 0, got roots {roots}")
    for k in range(1, K):
        if not 0 <= asset.joint_parents[k] < k:
            raise AssetError(f"joint {k} has parent {asset.joint_parents[k]}; parents must precede children")

    W = asset.skinning_weights
    if W.shape != (K, N):
        raise AssetError(f"skinning_weights must be ({K}, {N}), got {W.shape}")
    if np.any(W < 0):
        raise AssetError("skinning_weights must be nonnegative")
    if not np.allclose(W.sum(axis=0), 1.0, atol=1e-9):
        raise AssetError("skinning weights of every vertex must sum to 1")
    if np.any(np.count_nonzero(W, axis=0) > MAX_INFLUENCES):
        raise AssetError(f"at most {MAX_INFLUENCES} joint influences per vertex")

    lm = asset.landmark_vertices
    if lm.shape != asset.landmark_weights.shape:
        raise AssetError("landmark_vertices and landmark_weights differ in length")
    if lm.size and (lm.min() < 0 or lm.max() >= N):
        raise AssetError("landmark binding references a vertex out of range")
    if np.any(asset.landmark_weights < 0):
        raise AssetError("landmark weights must be nonnegative")

    for eye in asset.eyeballs:
        if not 0 <= eye.joint < K or eye.radius <= 0:
            raise AssetError(f"invalid eyeball proxy on joint {eye.joint}")
        if eye.guarded_vertices.size and eye.guarded_vertices.max() >= N:
            raise AssetError("eyeball guards a vertex out of range")
    for hull in asset.teeth_hulls:
        if not 0 <= hull.joint < K:
            raise AssetError(f"teeth hull attached to unknown joint {hull.joint}")
        norms = np.linalg.norm(hull.normals, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9, rtol=0.0):
            raise AssetError("teeth hull normals must be unit length")
        if hull.offsets.shape != (hull.normals.shape[0],):
            raise AssetError("teeth hull needs one offset per plane")
    if asset.lip_vertices.size and asset.lip_vertices.max() >= N:
        raise AssetError("lip vertex out of range")


@dataclass(frozen=True, eq=False)
class Parameters:
    """
    Full parameter set: identity shared across frames, expression and pose per
    frame, extrinsics and focal length per camera.
    """
    beta: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    cam_rot: np.ndarray
    cam_trans: np.ndarray
    focal: np.ndarray

    @property
    def frames(self) -> int:
        return self.psi.shape[0]

    @property
    def cameras(self) -> int:
        return self.focal.shape[0]

    @classmethod
    def zeros(cls, asset: ModelAsset, frames: int = 1, cameras: int = 1, focal: float = 1000.0) -> "Parameters":
        return cls(
            beta=np.zeros(asset.identity_dims),
            psi=np.zeros((frames, asset.expression_dims)),
            theta=np.zeros((frames, asset.pose_dims)),
            cam_rot=np.zeros((cameras, 3)),
            cam_trans=np.zeros((cameras, 3)),
            focal=np.full(cameras, float(focal)),
        )

    def copy(self, **changes) -> "Parameters":
        values = {name: np.array(getattr(self, name), dtype=np.float64) for name in PARAMETER_FIELDS}
        values.update({k: np.array(v, dtype=np.float64) for k, v in changes.items()})
        return Parameters(**values)

    def validate(self, asset: ModelAsset) -> None:
        F, C = self.frames, self.cameras
        if F < 1 or C < 1:
            raise ContractViolation("need at least one frame and one camera")
        expected = {
            "beta": (asset.identity_dims,),
            "psi": (F, asset.expression_dims),
            "theta": (F, asset.pose_dims),
            "cam_rot": (C, 3),
            "cam_trans": (C, 3),
            "focal": (C,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ContractViolation(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if np.any(self.focal <= 0):
            raise ContractViolation("focal lengths must be positive")


PARAMETER_FIELDS = ("beta", "psi", "theta", "cam_rot", "cam_trans", "focal")


def _check_dims(asset: ModelAsset, beta: np.ndarray, psi: Optional[np.ndarray] = None) -> None:
    if np.shape(beta) != (asset.identity_dims,):
        raise ContractViolation(f"beta has shape {np.shape(beta)}, expected ({asset.identity_dims},)")
    if psi is not None and np.shape(psi) != (asset.expression_dims,):
        raise ContractViolation(f"psi has shape {np.shape(psi)}, expected ({asset.expression_dims},)")


def bind_mesh(asset: ModelAsset, beta: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """T(beta, psi): bind-pose vertices, (N, 3)"""
    _check_dims(asset, beta, psi)
    return asset.base_vertices + asset.identity_basis @ beta + asset.expression_basis @ psi


def bind_joints(asset: ModelAsset, beta: np.ndarray) -> np.ndarray:
    """J(beta): bind-pose joint locations, (K, 3)"""
    _check_dims(asset, beta)
    return asset.base_joints + asset.joint_identity_basis @ beta


@dataclass(frozen=True, eq=False)
class JointTransforms:
    """
    World transforms x -> A[k] x + b[k] mapping bind-space points to posed
    space for each joint, optionally with derivatives: dA/db over the 3K+3
    pose channels and db_dbeta over identity through the joint regressor.
    """
    A: np.ndarray
    b: np.ndarray
    dA: Optional[np.ndarray] = None
    db: Optional[np.ndarray] = None
    db_dbeta: Optional[np.ndarray] = None


def _check_theta(asset: ModelAsset, theta_frame: np.ndarray) -> None:
    if np.shape(theta_frame) != (asset.pose_dims,):
        raise ContractViolation(f"theta frame has shape {np.shape(theta_frame)}, expected ({asset.pose_dims},)")


def forward_kinematics(
    asset: ModelAsset,
    joints: np.ndarray,
    theta_frame: np.ndarray,
    with_derivatives: bool = False,
) -> JointTransforms:
    """
    Joint world transforms. Each joint rotates about its bind location and
    inherits its parent's transform; the root is additionally translated by
    the last three pose channels.
    """
    _check_theta(asset, theta_frame)
    K = asset.joint_count
    P = asset.pose_dims
    rotvecs = theta_frame[: 3 * K].reshape(K, 3)
    translation = theta_frame[3 * K:]
    eye = np.eye(3)

    A = np.empty((K, 3, 3))
    b = np.empty((K, 3))
    if with_derivatives:
        dA = np.zeros((P, K, 3, 3))
        db = np.zeros((P, K, 3))
        dJ = asset.joint_identity_basis
        db_dbeta = np.zeros((K, 3, dJ.shape[2]))

    for k in range(K):
        R = rotvec_to_matrix(rotvecs[k])
        Jk = joints[k]
        parent = int(asset.joint_parents[k])
        if parent == ROOT_PARENT:
            A[k] = R
            b[k] = Jk - R @ Jk + translation
        else:
            A[k] = A[parent] @ R
            b[k] = A[parent] @ (Jk - R @ Jk) + b[parent]
        if not with_derivatives:
            continue

        dR = rotvec_derivatives(rotvecs[k], R)
        A_parent = eye if parent == ROOT_PARENT else A[parent]
        if parent != ROOT_PARENT:
            dA[:, k] = dA[:, parent] @ R
            db[:, k] = dA[:, parent] @ (Jk - R @ Jk) + db[:, parent]
            db_dbeta[k] = db_dbeta[parent]
        for a in range(3):
            dA[3 * k + a, k] += A_parent @ dR[a]
            db[3 * k + a, k] -= A_parent @ (dR[a] @ Jk)
        db_dbeta[k] += A_parent @ (eye - R) @ dJ[k]
        if parent == ROOT_PARENT:
            db[3 * K:, k] = eye
    if with_derivatives:
        return JointTransforms(A=A, b=b, dA=dA, db=db, db_dbeta=db_dbeta)
    return JointTransforms(A=A, b=b)


def _blend(asset: ModelAsset, transforms: JointTransforms, vertices: np.ndarray, ids: np.ndarray) -> np.ndarray:
    W = asset.skinning_weights[:, ids]
    per_joint = np.einsum("kij,nj->kni", transforms.A, vertices) + transforms.b[:, None, :]
    return np.einsum("kn,kni->ni", W, per_joint)


def skin(asset: ModelAsset, bind_vertices: np.ndarray, bind_joint_positions: np.ndarray, theta_frame: np.ndarray) -> np.ndarray:
    """L(V, theta, J; W): linear blend skinning of bind vertices, (N, 3)"""
    if bind_vertices.shape != (asset.vertex_count, 3):
        raise ContractViolation(f"bind vertices have shape {bind_vertices.shape}")
    if bind_joint_positions.shape != (asset.joint_count, 3):
        raise ContractViolation(f"bind joints have shape {bind_joint_positions.shape}")
    transforms = forward_kinematics(asset, bind_joint_positions, theta_frame)
    return _blend(asset, transforms, bind_vertices, np.arange(asset.vertex_count))


def _check_frame(params: Parameters, frame: int) -> None:
    if not 0 <= frame < params.frames:
        raise ContractViolation(f"frame {frame} out of range for {params.frames} frames")


def mesh_generate(asset: ModelAsset, params: Parameters, frame: int) -> np.ndarray:
    """M(beta, psi, theta) for one frame, (N, 3)"""
    _check_frame(params, frame)
    return skin(
        asset,
        bind_mesh(asset, params.beta, params.psi[frame]),
        bind_joints(asset, params.beta),
        params.theta[frame],
    )


@dataclass(frozen=True, eq=False)
class VertexJacobian:
    """Posed positions of a vertex subset and their derivative blocks"""
    vertex_ids: np.ndarray
    positions: np.ndarray
    d_beta: np.ndarray
    d_psi: np.ndarray
    d_theta: np.ndarray
    transforms: JointTransforms

    def dense(self) -> np.ndarray:
        """(n, 3, |beta| + |psi| + 3K+3) in the per-frame parameter order"""
        return np.concatenate([self.d_beta, self.d_psi, self.d_theta], axis=2)


def tracked_vertices(asset: ModelAsset) -> np.ndarray:
    """Sorted ids of every vertex the fitting energy reads: landmarks, guarded eyelids, lips"""
    ids = [asset.landmark_vertices, asset.lip_vertices]
    ids.extend(eye.guarded_vertices for eye in asset.eyeballs)
    return np.unique(np.concatenate(ids).astype(np.int64))


def _bind_subset(asset: ModelAsset, params: Parameters, frame: int, ids: np.ndarray) -> np.ndarray:
    return (
        asset.base_vertices[ids]
        + asset.identity_basis[ids] @ params.beta
        + asset.expression_basis[ids] @ params.psi[frame]
    )


def posed_vertices(asset: ModelAsset, params: Parameters, frame: int, vertex_ids: np.ndarray) -> np.ndarray:
    """
    Posed positions of a vertex subset. For the same `vertex_ids` the result is
    bitwise equal to `vertex_jacobian(...).positions`.
    """
    _check_frame(params, frame)
    ids = np.asarray(vertex_ids, dtype=np.int64)
    transforms = forward_kinematics(asset, bind_joints(asset, params.beta), params.theta[frame])
    return _blend(asset, transforms, _bind_subset(asset, params, frame, ids), ids)


def vertex_jacobian(asset: ModelAsset, params: Parameters, frame: int, vertex_ids: np.ndarray) -> VertexJacobian:
    """Posed positions of `vertex_ids` with analytic derivatives w.r.t. (beta, psi_frame, theta_frame)"""
    _check_frame(params, frame)
    ids = np.asarray(vertex_ids, dtype=np.int64)
    joints = bind_joints(asset, params.beta)
    transforms = forward_kinematics(asset, joints, params.theta[frame], with_derivatives=True)
    bind = _bind_subset(asset, params, frame, ids)
    W = asset.skinning_weights[:, ids]
    positions = _blend(asset, transforms, bind, ids)

    A_bar = np.einsum("kn,kij->nij", W, transforms.A)
    d_beta = A_bar @ asset.identity_basis[ids] + np.einsum("kn,kib->nib", W, transforms.db_dbeta)
    d_psi = A_bar @ asset.expression_basis[ids]
    d_theta = (
        np.einsum("kn,pkij,nj->nip", W, transforms.dA, bind)
        + np.einsum("kn,pki->nip", W, transforms.db)
    )
    return VertexJacobian(ids, positions, d_beta, d_psi, d_theta, transforms)


def mesh_jacobian(asset: ModelAsset, params: Parameters, frame: int) -> VertexJacobian:
    """Derivatives of every landmark-bound vertex for one frame"""
    return vertex_jacobian(asset, params, frame, asset.landmark_vertices)


def joint_point(
    asset: ModelAsset,
    params: Parameters,
    frame: int,
    joint: int,
    local_point: np.ndarray,
    transforms: Optional[JointTransforms] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Posed position of a point rigidly attached to `joint`, given relative to the
    joint's bind location, with its (3, |beta|) and (3, 3K+3) derivatives.
    """
    if transforms is None:
        transforms = forward_kinematics(asset, bind_joints(asset, params.beta), params.theta[frame], with_derivatives=True)
    q = bind_joints(asset, params.beta)[joint] + local_point
    A, b = transforms.A[joint], transforms.b[joint]
    position = A @ q + b
    d_beta = A @ asset.joint_identity_basis[joint] + transforms.db_dbeta[joint]
    d_theta = np.einsum("pij,j->ip", transforms.dA[:, joint], q) + transforms.db[:, joint].T
    return position, d_beta, d_theta
