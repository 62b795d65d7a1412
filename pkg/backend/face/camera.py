"""
Pinhole camera rig
Square pixels, principal point at image center unless given, world-to-camera
axis-angle extrinsics. Projection and its analytic Jacobian.
"""
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .errors import BehindCameraError, ContractViolation
from .rotation import rotvec_derivatives, rotvec_to_matrix

DEPTH_EPSILON = 1e-6
# rotation (3), translation (3), focal (1)
CAMERA_PARAM_COUNT = 7


class CameraConfig(BaseModel):
    """One camera as written in a run config"""
    rotation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    focal: Optional[float] = Field(default=None, gt=0)
    hfov: Optional[float] = Field(default=None, gt=0, lt=180)
    image_size: Tuple[int, int] = (1280, 720)
    principal_point: Optional[Tuple[float, float]] = None
    fix_rotation: bool = False
    fix_translation: bool = False
    fix_focal: bool = False

    @model_validator(mode="after")
    def _check(self):
        if min(self.image_size) <= 0:
            raise ValueError("image_size must be positive")
        return self

    def resolved_focal(self) -> float:
        if self.focal is not None:
            return self.focal
        return focal_from_hfov(self.hfov if self.hfov is not None else 45.0, self.image_size[0])


@dataclass(frozen=True, eq=False)
class CameraRig:
    rotations: np.ndarray
    translations: np.ndarray
    focals: np.ndarray
    principal_points: np.ndarray
    image_sizes: np.ndarray
    fixed: np.ndarray

    def __post_init__(self):
        C = self.focals.shape[0]
        if C < 1:
            raise ContractViolation("a rig needs at least one camera")
        for name, shape in (("rotations", (C, 3)), ("translations", (C, 3)), ("principal_points", (C, 2)),
                            ("image_sizes", (C, 2)), ("fixed", (C, CAMERA_PARAM_COUNT))):
            if getattr(self, name).shape != shape:
                raise ContractViolation(f"rig {name} has shape {getattr(self, name).shape}, expected {shape}")
        if np.any(self.focals <= 0):
            raise ContractViolation("focal lengths must be positive")
        if np.any(self.image_sizes <= 0):
            raise ContractViolation("image sizes must be positive")

    @property
    def count(self) -> int:
        return self.focals.shape[0]

    def rotation_matrix(self, cam: int) -> np.ndarray:
        return rotvec_to_matrix(self.rotations[cam])

    def with_parameters(self, rotations: np.ndarray, translations: np.ndarray, focals: np.ndarray) -> "CameraRig":
        """Same intrinsics and fixed flags, new extrinsics and focal lengths"""
        return replace(
            self,
            rotations=np.asarray(rotations, dtype=np.float64),
            translations=np.asarray(translations, dtype=np.float64),
            focals=np.asarray(focals, dtype=np.float64),
        )

    @classmethod
    def create(
        cls,
        rotations: Sequence[Sequence[float]],
        translations: Sequence[Sequence[float]],
        focals: Sequence[float],
        image_sizes: Sequence[Sequence[int]],
        principal_points: Optional[Sequence[Sequence[float]]] = None,
        fixed: Optional[np.ndarray] = None,
    ) -> "CameraRig":
        image_sizes = np.asarray(image_sizes, dtype=np.float64)
        if principal_points is None:
            principal_points = image_sizes / 2.0
        C = len(focals)
        return cls(
            rotations=np.asarray(rotations, dtype=np.float64).reshape(C, 3),
            translations=np.asarray(translations, dtype=np.float64).reshape(C, 3),
            focals=np.asarray(focals, dtype=np.float64),
            principal_points=np.asarray(principal_points, dtype=np.float64).reshape(C, 2),
            image_sizes=image_sizes.reshape(C, 2),
            fixed=np.zeros((C, CAMERA_PARAM_COUNT), dtype=bool) if fixed is None else np.asarray(fixed, dtype=bool),
        )


def build_rig(cameras: List[CameraConfig]) -> CameraRig:
    """Rig from config entries; focal falls back to the hfov initialization"""
    fixed = np.zeros((len(cameras), CAMERA_PARAM_COUNT), dtype=bool)
    for j, cam in enumerate(cameras):
        fixed[j, 0:3] = cam.fix_rotation
        fixed[j, 3:6] = cam.fix_translation
        fixed[j, 6] = cam.fix_focal
    image_sizes = [cam.image_size for cam in cameras]
    principal = [
        cam.principal_point if cam.principal_point is not None else (cam.image_size[0] / 2.0, cam.image_size[1] / 2.0)
        for cam in cameras
    ]
    return CameraRig.create(
        rotations=[cam.rotation for cam in cameras],
        translations=[cam.translation for cam in cameras],
        focals=[cam.resolved_focal() for cam in cameras],
        image_sizes=image_sizes,
        principal_points=principal,
        fixed=fixed,
    )


def ring_cameras(
    count: int,
    distance: float = 60.0,
    step_degrees: float = 25.0,
    focal: float = 1000.0,
    image_size: Tuple[int, int] = (1280, 720),
) -> List[CameraConfig]:
    """
    Cameras on a horizontal arc around the point (0, 0, distance), all looking
    at it. Camera 0 sits at the origin with identity extrinsics; the others
    alternate left and right in `step_degrees` increments.
    """
    center = np.array([0.0, 0.0, distance])
    cameras = []
    for j in range(count):
        side = 1.0 if j % 2 else -1.0
        angle = np.radians(step_degrees * ((j + 1) // 2)) * side
        rotvec = np.array([0.0, -angle, 0.0])
        R = rotvec_to_matrix(rotvec)
        # camera-to-world rotation is R.T, optical center on the arc
        position = center + R.T @ (-center)
        cameras.append(CameraConfig(
            rotation=tuple(rotvec),
            translation=tuple(-R @ position),
            focal=focal,
            image_size=image_size,
        ))
    return cameras


def focal_from_hfov(hfov_degrees: float, image_width_px: float) -> float:
    """Focal length in pixels giving horizontal field of view `hfov_degrees`"""
    if not 0.0 < hfov_degrees < 180.0:
        raise ContractViolation(f"horizontal FOV must lie in (0, 180) degrees, got {hfov_degrees}")
    if image_width_px <= 0:
        raise ContractViolation(f"image width must be positive, got {image_width_px}")
    focal = (image_width_px / 2.0) / np.tan(np.radians(hfov_degrees) / 2.0)
    if not np.isfinite(focal):
        raise ContractViolation(f"horizontal FOV {hfov_degrees} gives an unbounded focal length")
    return float(focal)


def to_camera(rig: CameraRig, cam: int, points: np.ndarray) -> np.ndarray:
    """R x + T, evaluated per point so results do not depend on batch size"""
    R = rig.rotation_matrix(cam)
    points = np.atleast_2d(points)
    return points[:, 0:1] * R[:, 0] + points[:, 1:2] * R[:, 1] + points[:, 2:3] * R[:, 2] + rig.translations[cam]


def visible(rig: CameraRig, cam: int, points: np.ndarray) -> np.ndarray:
    """Mask of points strictly in front of the camera"""
    return to_camera(rig, cam, np.atleast_2d(points))[:, 2] > DEPTH_EPSILON


def _require_visible(rig: CameraRig, cam: int, depth: np.ndarray) -> None:
    bad = np.flatnonzero(depth <= DEPTH_EPSILON)
    if bad.size:
        raise BehindCameraError(
            f"{bad.size} point(s) at or behind camera {cam} (depth <= {DEPTH_EPSILON})",
            [(cam, int(i)) for i in bad],
        )


def project_points(rig: CameraRig, cam: int, points: np.ndarray) -> np.ndarray:
    """Pixel positions of (n, 3) world points in camera `cam`, (n, 2)"""
    pc = to_camera(rig, cam, np.atleast_2d(points))
    _require_visible(rig, cam, pc[:, 2])
    return rig.focals[cam] * pc[:, :2] / pc[:, 2:3] + rig.principal_points[cam]


def project(rig: CameraRig, cam: int, point: np.ndarray) -> np.ndarray:
    """x = Pi X M: pixel position of one world point"""
    return project_points(rig, cam, np.asarray(point, dtype=np.float64)[None, :])[0]


@dataclass(frozen=True, eq=False)
class ProjectionJacobian:
    """Projections with 2x3 point blocks and 2x7 camera blocks"""
    pixels: np.ndarray
    d_point: np.ndarray
    d_camera: np.ndarray


def project_points_jacobian(rig: CameraRig, cam: int, points: np.ndarray) -> ProjectionJacobian:
    points = np.atleast_2d(points)
    R = rig.rotation_matrix(cam)
    pc = to_camera(rig, cam, points)
    _require_visible(rig, cam, pc[:, 2])
    f = rig.focals[cam]
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    n = len(points)

    # d pixel / d camera-space point
    d_pc = np.zeros((n, 2, 3))
    d_pc[:, 0, 0] = f / z
    d_pc[:, 1, 1] = f / z
    d_pc[:, 0, 2] = -f * x / z ** 2
    d_pc[:, 1, 2] = -f * y / z ** 2

    d_point = d_pc @ R
    dR = rotvec_derivatives(rig.rotations[cam], R)
    d_pc_d_rot = np.einsum("aij,nj->nia", dR, points)
    d_camera = np.zeros((n, 2, CAMERA_PARAM_COUNT))
    d_camera[:, :, 0:3] = d_pc @ d_pc_d_rot
    d_camera[:, :, 3:6] = d_pc
    d_camera[:, 0, 6] = x / z
    d_camera[:, 1, 6] = y / z
    d_camera[:, :, rig.fixed[cam]] = 0.0

    pixels = f * pc[:, :2] / pc[:, 2:3] + rig.principal_points[cam]
    return ProjectionJacobian(pixels, d_point, d_camera)


def project_jacobian(rig: CameraRig, cam: int, point: np.ndarray) -> ProjectionJacobian:
    """Derivatives of one projection w.r.t. the 3D point and the camera's 7 parameters"""
    jac = project_points_jacobian(rig, cam, np.asarray(point, dtype=np.float64)[None, :])
    return ProjectionJacobian(jac.pixels[0], jac.d_point[0], jac.d_camera[0])
