"""
Probabilistic landmark observations
Observation containers, the Gaussian negative log likelihood, and the seeded
synthetic generator that stands in for a landmark network.
"""
import logging
from dataclasses import dataclass, replace
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .camera import CameraRig, project_points, visible
from .errors import ContractViolation
from .face_model import ModelAsset, Parameters, posed_vertices, tracked_vertices
from .seeding import stream

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-3


@dataclass(frozen=True)
class LandmarkObservation:
    frame: int
    camera: int
    landmark: int
    mu: Tuple[float, float]
    sigma: float


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """
    Columnar store of observations. Missing (frame, camera, landmark) triples
    are allowed; present ones must be unique.
    """
    frames: int
    cameras: int
    landmarks: int
    frame_idx: np.ndarray
    camera_idx: np.ndarray
    landmark_idx: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    image_sizes: Optional[np.ndarray] = None
    ground_truth: Optional[Parameters] = None

    def __post_init__(self):
        n = len(self.frame_idx)
        if not (len(self.camera_idx) == len(self.landmark_idx) == len(self.sigma) == n) or self.mu.shape != (n, 2):
            raise ContractViolation("observation columns differ in length")
        for name, idx, bound in (("frame", self.frame_idx, self.frames), ("camera", self.camera_idx, self.cameras),
                                 ("landmark", self.landmark_idx, self.landmarks)):
            if n and (idx.min() < 0 or idx.max() >= bound):
                raise ContractViolation(f"{name} index out of range [0, {bound})")
        if n and self.sigma.min() < SIGMA_FLOOR:
            raise ContractViolation(f"sigma below floor {SIGMA_FLOOR}")
        keys = (self.frame_idx * self.cameras + self.camera_idx) * self.landmarks + self.landmark_idx
        if len(np.unique(keys)) != n:
            raise ContractViolation("duplicate (frame, camera, landmark) observation")

    def __len__(self) -> int:
        return len(self.frame_idx)

    @property
    def observations(self) -> List[LandmarkObservation]:
        return [
            LandmarkObservation(int(f), int(c), int(k), (float(m[0]), float(m[1])), float(s))
            for f, c, k, m, s in zip(self.frame_idx, self.camera_idx, self.landmark_idx, self.mu, self.sigma)
        ]

    @classmethod
    def from_observations(
        cls,
        observations: Sequence[LandmarkObservation],
        frames: int,
        cameras: int,
        landmarks: int,
        image_sizes: Optional[np.ndarray] = None,
        ground_truth: Optional[Parameters] = None,
    ) -> "ObservationSet":
        return cls(
            frames=frames,
            cameras=cameras,
            landmarks=landmarks,
            frame_idx=np.array([o.frame for o in observations], dtype=np.int64),
            camera_idx=np.array([o.camera for o in observations], dtype=np.int64),
            landmark_idx=np.array([o.landmark for o in observations], dtype=np.int64),
            mu=np.array([o.mu for o in observations], dtype=np.float64).reshape(-1, 2),
            sigma=np.array([o.sigma for o in observations], dtype=np.float64),
            image_sizes=image_sizes,
            ground_truth=ground_truth,
        )

    def select(self, mask: np.ndarray, frames: Optional[int] = None, frame_offset: int = 0) -> "ObservationSet":
        """Subset of observations, optionally re-indexing frames"""
        return replace(
            self,
            frames=self.frames if frames is None else frames,
            frame_idx=self.frame_idx[mask] - frame_offset,
            camera_idx=self.camera_idx[mask],
            landmark_idx=self.landmark_idx[mask],
            mu=self.mu[mask],
            sigma=self.sigma[mask],
            ground_truth=None if frames is not None else self.ground_truth,
        )

    def for_camera(self, cam: int) -> "ObservationSet":
        """Observations of one camera as a single-camera set"""
        mask = self.camera_idx == cam
        return replace(
            self.select(mask),
            cameras=1,
            camera_idx=np.zeros(int(mask.sum()), dtype=np.int64),
            image_sizes=None if self.image_sizes is None else self.image_sizes[cam: cam + 1],
            ground_truth=None,
        )

    def with_sigma(self, sigma: np.ndarray) -> "ObservationSet":
        return replace(self, sigma=np.asarray(sigma, dtype=np.float64))


def whitened_residual(predicted: np.ndarray, target: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """(x - mu) / (sqrt(2) sigma); its squared norm is the |error|^2 / (2 sigma^2) term"""
    return (predicted - target) / (np.sqrt(2.0) * np.asarray(sigma)[..., None])


@dataclass(frozen=True)
class GnllResult:
    total: float
    per_landmark: np.ndarray
    sigma_term: np.ndarray
    mu_term: np.ndarray


def gnll_loss(
    predicted_mu: np.ndarray,
    predicted_sigma: np.ndarray,
    truth: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> GnllResult:
    """
    Sum over landmarks of weight * (log sigma^2 + |mu - mu'|^2 / (2 sigma^2)),
    with the per-landmark breakdown.
    """
    predicted_mu = np.asarray(predicted_mu, dtype=np.float64).reshape(-1, 2)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    sigma = np.asarray(predicted_sigma, dtype=np.float64).reshape(-1)
    n = len(sigma)
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if not (predicted_mu.shape[0] == truth.shape[0] == weights.shape[0] == n):
        raise ContractViolation("gnll_loss inputs differ in length")
    if np.any(sigma <= 0):
        raise ContractViolation("gnll_loss needs sigma > 0")
    sigma_term = weights * np.log(sigma ** 2)
    mu_term = weights * np.sum(whitened_residual(predicted_mu, truth, sigma) ** 2, axis=1)
    per_landmark = sigma_term + mu_term
    return GnllResult(float(per_landmark.sum()), per_landmark, sigma_term, mu_term)


class NoiseSpec(BaseModel):
    """
    How synthetic observations are corrupted and what sigma they report.
    calibrated: sigma equals the true noise scale; miscalibrated: constant
    sigma regardless of noise; occlusion: calibrated, with a seeded subset of
    landmarks given inflated noise and sigma.
    """
    mode: Literal["calibrated", "miscalibrated", "occlusion"] = "calibrated"
    sigma_min: float = Field(default=0.5, ge=0)
    sigma_max: float = Field(default=2.0, ge=0)
    constant_sigma: float = Field(default=1.0, gt=0)
    occluded_fraction: float = Field(default=0.1, ge=0, lt=1)
    occlusion_inflation: float = Field(default=4.0, gt=1)
    occluded_landmarks: Optional[List[int]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.sigma_max < self.sigma_min:
            raise ValueError("sigma_max must be >= sigma_min")
        if self.sigma_max > 0 and self.sigma_min <= 0:
            raise ValueError("sigma_min must be positive when noise is enabled")
        return self

    @classmethod
    def noiseless(cls) -> "NoiseSpec":
        return cls(sigma_min=0.0, sigma_max=0.0)

    @property
    def is_zero(self) -> bool:
        return self.sigma_max == 0.0


def landmark_noise_scales(noise: NoiseSpec, landmarks: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-landmark noise standard deviations and the occlusion mask"""
    if noise.occluded_landmarks is not None:
        ids = np.asarray(noise.occluded_landmarks, dtype=np.int64)
        bad = ids[(ids < 0) | (ids >= landmarks)]
        if bad.size:
            raise ContractViolation(f"occluded landmark ids {bad.tolist()} out of range [0, {landmarks})")
    if noise.is_zero:
        return np.zeros(landmarks), np.zeros(landmarks, dtype=bool)
    rng = stream(seed, "sigma")
    scales = np.exp(rng.uniform(np.log(noise.sigma_min), np.log(noise.sigma_max), size=landmarks))
    occluded = np.zeros(landmarks, dtype=bool)
    if noise.mode == "occlusion":
        if noise.occluded_landmarks is not None:
            occluded[ids] = True
        else:
            occluded = stream(seed, "occlusion").random(landmarks) < noise.occluded_fraction
        scales = np.where(occluded, np.maximum(scales, noise.sigma_max) * noise.occlusion_inflation, scales)
    return scales, occluded


def project_landmarks(asset: ModelAsset, params: Parameters, rig: CameraRig) -> Tuple[np.ndarray, np.ndarray]:
    """Exact landmark projections (F, C, L, 2) and a visibility mask (F, C, L)"""
    F, C, L = params.frames, rig.count, asset.landmark_count
    rig = rig.with_parameters(params.cam_rot, params.cam_trans, params.focal)
    pixels = np.full((F, C, L, 2), np.nan)
    mask = np.zeros((F, C, L), dtype=bool)
    # same vertex subset as the fitting energy, so exact data gives exactly zero residuals
    ids = tracked_vertices(asset)
    rows = np.searchsorted(ids, asset.landmark_vertices)
    for i in range(F):
        points = posed_vertices(asset, params, i, ids)[rows]
        for j in range(C):
            ok = visible(rig, j, points)
            mask[i, j] = ok
            if ok.any():
                pixels[i, j, ok] = project_points(rig, j, points[ok])
    return pixels, mask


def synth_observe(asset: ModelAsset, params: Parameters, rig: CameraRig, noise: NoiseSpec, seed: int) -> ObservationSet:
    """
    Noisy observations of every bound landmark in every frame and camera.
    Landmarks behind a camera are dropped with a warning.
    """
    params.validate(asset)
    if params.cameras != rig.count:
        raise ContractViolation(f"parameters describe {params.cameras} cameras, rig has {rig.count}")
    pixels, mask = project_landmarks(asset, params, rig)
    F, C, L = mask.shape
    if not mask.all():
        logger.warning("Dropped %d behind-camera landmark observations", int((~mask).sum()))

    scales, occluded = landmark_noise_scales(noise, L, seed)
    f_idx, c_idx, k_idx = np.nonzero(mask)
    std = scales[k_idx]
    rng = stream(seed, "noise")
    mu = pixels[f_idx, c_idx, k_idx] + rng.normal(size=(len(k_idx), 2)) * std[:, None]
    if noise.mode == "miscalibrated" and not noise.is_zero:
        sigma = np.full(len(k_idx), noise.constant_sigma)
    else:
        sigma = np.maximum(std, SIGMA_FLOOR)
    if occluded.any():
        logger.info("Occlusion mask covers %d of %d landmarks", int(occluded.sum()), L)
    return ObservationSet(
        frames=F,
        cameras=C,
        landmarks=L,
        frame_idx=f_idx.astype(np.int64),
        camera_idx=c_idx.astype(np.int64),
        landmark_idx=k_idx.astype(np.int64),
        mu=mu,
        sigma=sigma,
        image_sizes=rig.image_sizes.copy(),
        ground_truth=params,
    )


@dataclass(frozen=True)
class CalibrationSummary:
    mean_gnll: float
    within_one_sigma: float
    within_two_sigma: float


def calibration_summary(obs: ObservationSet, truth_pixels: np.ndarray) -> CalibrationSummary:
    """How well reported sigma matches actual error against (F, C, L, 2) true projections"""
    truth = truth_pixels[obs.frame_idx, obs.camera_idx, obs.landmark_idx]
    result = gnll_loss(obs.mu, obs.sigma, truth)
    z = np.abs(obs.mu - truth) / obs.sigma[:, None]
    return CalibrationSummary(
        mean_gnll=result.total / max(len(obs), 1),
        within_one_sigma=float(np.mean(z <= 1.0)),
        within_two_sigma=float(np.mean(z <= 2.0)),
    )
