"""
Procedural toy head asset
A deformed ellipsoid head with a four-joint rig (root, neck, two eyes),
smooth identity modes, local expression bumps, eyeball spheres and two
box-shaped teeth hulls. Everything flows from one seed.
"""
import logging
from typing import List, Tuple

import numpy as np

from .errors import ContractViolation
from .face_model import EyeballProxy, ModelAsset, ROOT_PARENT, TeethHull
from .seeding import stream

logger = logging.getLogger(__name__)

JOINT_NAMES = ("head_root", "neck", "left_eye", "right_eye")
HEAD_RADII = np.array([7.5, 10.0, 9.0])
BASE_JOINTS = np.array([
    [0.0, -11.0, 1.0],
    [0.0, -6.0, 1.0],
    [3.0, 2.0, -6.4],
    [-3.0, 2.0, -6.4],
])
JOINT_PARENTS = np.array([ROOT_PARENT, 0, 1, 1])
NECK = 1
EYE_JOINTS = (2, 3)
EYE_RADIUS = 1.2
EYE_NEIGHBOURS = 6
MOUTH_CENTER = np.array([0.0, -4.5, -8.0])
LIP_COUNT = 8
# (min, max) corners in world bind space
TEETH_BOXES = (
    (np.array([-2.2, -4.2, -7.2]), np.array([2.2, -3.0, -5.0])),
    (np.array([-2.2, -5.6, -7.2]), np.array([2.2, -4.4, -5.0])),
)
IDENTITY_RMS_CM = 0.8
EXPRESSION_PEAK_CM = 1.0
EXPRESSION_RADIUS = 3.5
POLY_DEGREE = 4
REGRESSOR_NEIGHBOURS = 8
# size of the smallest landmark scheme; expression bumps are centred inside it
CORE_LANDMARKS = 68


def _grid_shape(vertex_count: int) -> Tuple[int, int]:
    interior = vertex_count - 2
    if interior < 16:
        raise ContractViolation(f"vertex_count {vertex_count} too small for a toy head")
    rings = int(np.sqrt(interior / 1.5))
    while rings >= 4 and interior % rings:
        rings -= 1
    if rings < 4:
        raise ContractViolation(f"vertex_count - 2 = {interior} has no usable ring/segment factorization")
    return rings, interior // rings


def _head_surface(vertex_count: int) -> Tuple[np.ndarray, np.ndarray]:
    rings, segments = _grid_shape(vertex_count)
    polar = np.linspace(0.0, np.pi, rings + 2)[1:-1]
    azimuth = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    P, Az = np.meshgrid(polar, azimuth, indexing="ij")
    dirs = np.stack([np.sin(P) * np.cos(Az), np.cos(P), np.sin(P) * np.sin(Az)], axis=-1).reshape(-1, 3)
    dirs = np.vstack([[0.0, 1.0, 0.0], dirs, [0.0, -1.0, 0.0]])
    vertices = dirs * HEAD_RADII

    # flatter back of the head, a nose and a chin
    back = vertices[:, 2] > 0
    vertices[back, 2] *= 0.9
    nose = np.exp(-(vertices[:, 0] ** 2 + (vertices[:, 1] + 1.0) ** 2) / (2 * 1.3 ** 2))
    vertices[:, 2] -= 1.6 * nose * (vertices[:, 2] < 0)
    chin = np.exp(-(vertices[:, 0] ** 2 + (vertices[:, 1] + 8.0) ** 2) / (2 * 2.0 ** 2))
    vertices[:, 2] -= 0.6 * chin * (vertices[:, 2] < 0)

    faces: List[Tuple[int, int, int]] = []
    first, last = 0, vertex_count - 1

    def ring_index(r: int, s: int) -> int:
        return 1 + r * segments + (s % segments)

    for s in range(segments):
        faces.append((first, ring_index(0, s + 1), ring_index(0, s)))
        faces.append((last, ring_index(rings - 1, s), ring_index(rings - 1, s + 1)))
    for r in range(rings - 1):
        for s in range(segments):
            a, b = ring_index(r, s), ring_index(r, s + 1)
            c, d = ring_index(r + 1, s), ring_index(r + 1, s + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    return vertices, np.array(faces, dtype=np.int64)


def _nearest(vertices: np.ndarray, point: np.ndarray, count: int) -> np.ndarray:
    order = np.argsort(np.linalg.norm(vertices - point, axis=1), kind="stable")
    return np.sort(order[:count])


def _skinning_weights(vertices: np.ndarray, eye_regions: List[np.ndarray]) -> np.ndarray:
    K, N = len(JOINT_NAMES), len(vertices)
    W = np.zeros((K, N))
    s = np.clip((vertices[:, 1] + 8.0) / 12.0, 0.0, 1.0)
    s = s * s * (3.0 - 2.0 * s)
    W[0] = 1.0 - s
    W[NECK] = s
    for joint, region in zip(EYE_JOINTS, eye_regions):
        d = np.linalg.norm(vertices[region] - BASE_JOINTS[joint], axis=1)
        W[joint, region] = 0.5 * np.exp(-(d ** 2) / (2 * 1.5 ** 2))
    W /= W.sum(axis=0, keepdims=True)
    return W


def _polynomial_features(vertices: np.ndarray, degree: int) -> np.ndarray:
    u = vertices / HEAD_RADII
    columns = []
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            for k in range(degree + 1 - i - j):
                columns.append(u[:, 0] ** i * u[:, 1] ** j * u[:, 2] ** k)
    return np.stack(columns, axis=1)


def _similarity_fields(vertices: np.ndarray) -> np.ndarray:
    """Translation, infinitesimal rotation and scale displacement fields, (3N, 7)"""
    centered = vertices - vertices.mean(axis=0)
    fields = []
    for a in range(3):
        t = np.zeros_like(vertices)
        t[:, a] = 1.0
        fields.append(t.ravel())
    for a in range(3):
        axis = np.zeros(3)
        axis[a] = 1.0
        fields.append(np.cross(axis, centered).ravel())
    fields.append(centered.ravel())
    return np.stack(fields, axis=1)


def _identity_basis(vertices: np.ndarray, dims: int, rng: np.random.Generator) -> np.ndarray:
    N = len(vertices)
    features = _polynomial_features(vertices, POLY_DEGREE)
    if dims > 3 * features.shape[1] - 7:
        raise ContractViolation(f"identity_dims {dims} exceeds the toy head's number of smooth deformation modes")
    raw = np.stack([(features @ rng.normal(size=(features.shape[1], 3))).ravel() for _ in range(dims)], axis=1)
    rigid, _ = np.linalg.qr(_similarity_fields(vertices))
    raw -= rigid @ (rigid.T @ raw)
    modes, _ = np.linalg.qr(raw)
    modes *= IDENTITY_RMS_CM * np.sqrt(N)
    return modes.reshape(N, 3, dims)


def _expression_basis(vertices: np.ndarray, centers: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    N = len(vertices)
    basis = np.zeros((N, 3, len(centers)))
    for c, vertex in enumerate(centers):
        d2 = np.sum((vertices - vertices[vertex]) ** 2, axis=1) / EXPRESSION_RADIUS ** 2
        falloff = np.where(d2 < 1.0, (1.0 - d2) ** 2, 0.0)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        basis[:, :, c] = EXPRESSION_PEAK_CM * falloff[:, None] * direction
    return basis


def landmark_order(vertices: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """Farthest-point ordering of all vertices starting from `seeds`"""
    N = len(vertices)
    order = list(dict.fromkeys(int(s) for s in seeds))
    dist = np.full(N, np.inf)
    for s in order:
        dist = np.minimum(dist, np.linalg.norm(vertices - vertices[s], axis=1))
    while len(order) < N:
        nxt = int(np.argmax(dist))
        order.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(vertices - vertices[nxt], axis=1))
        dist[nxt] = -1.0
    return np.array(order, dtype=np.int64)


def landmark_bindings(order: np.ndarray, count: int) -> np.ndarray:
    """First `count` vertices of the ordering, wrapping when count exceeds N"""
    return order[np.arange(count) % len(order)]


def box_hull(lower: np.ndarray, upper: np.ndarray, origin: np.ndarray) -> TeethHull:
    normals, offsets = [], []
    for a in range(3):
        n = np.zeros(3)
        n[a] = 1.0
        normals.append(n.copy())
        offsets.append(-(upper[a] - origin[a]))
        normals.append(-n)
        offsets.append(lower[a] - origin[a])
    return TeethHull(joint=NECK, normals=np.array(normals), offsets=np.array(offsets))


def synth_toy_asset(
    seed: int,
    vertex_count: int = 602,
    identity_dims: int = 16,
    expression_dims: int = 24,
    landmark_count: int = 320,
) -> ModelAsset:
    """Build the toy head deterministically from `seed`"""
    rng = stream(seed, "asset")
    vertices, faces = _head_surface(vertex_count)

    eye_regions = [_nearest(vertices, BASE_JOINTS[j], EYE_NEIGHBOURS) for j in EYE_JOINTS]
    lips = _nearest(vertices, MOUTH_CENTER, LIP_COUNT)
    W = _skinning_weights(vertices, eye_regions)

    priority = np.concatenate([eye_regions[0][:3], eye_regions[1][:3], lips[:4]])
    order = landmark_order(vertices, priority)
    core = order[:CORE_LANDMARKS]
    front = [v for v in core if vertices[v, 2] < 0.0]
    pool = front if len(front) >= expression_dims else list(core)
    if len(pool) < expression_dims:
        pool = list(order)
    centers = np.array(pool[:expression_dims], dtype=np.int64)

    identity = _identity_basis(vertices, identity_dims, rng)
    expression = _expression_basis(vertices, centers, rng)

    regressor = np.zeros((len(JOINT_NAMES), vertex_count))
    for k, joint in enumerate(BASE_JOINTS):
        regressor[k, _nearest(vertices, joint, REGRESSOR_NEIGHBOURS)] = 1.0 / REGRESSOR_NEIGHBOURS
    joint_identity = np.einsum("kn,nib->kib", regressor, identity)

    eyeballs = tuple(
        EyeballProxy(joint=j, center_offset=np.zeros(3), radius=EYE_RADIUS, guarded_vertices=region)
        for j, region in zip(EYE_JOINTS, eye_regions)
    )
    hulls = tuple(box_hull(lo, hi, BASE_JOINTS[NECK]) for lo, hi in TEETH_BOXES)

    bound = landmark_bindings(order, landmark_count)
    logger.info(
        "Synthesized toy asset: N=%d, |beta|=%d, |psi|=%d, K=%d, |L|=%d (seed %d)",
        vertex_count, identity_dims, expression_dims, len(JOINT_NAMES), landmark_count, seed,
    )
    return ModelAsset(
        base_vertices=vertices,
        identity_basis=identity,
        expression_basis=expression,
        joint_parents=JOINT_PARENTS.copy(),
        base_joints=BASE_JOINTS.copy(),
        joint_identity_basis=joint_identity,
        skinning_weights=W,
        landmark_vertices=bound,
        landmark_weights=np.ones(landmark_count),
        eyeballs=eyeballs,
        teeth_hulls=hulls,
        lip_vertices=lips,
        faces=faces,
        joint_names=JOINT_NAMES,
    )
