import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import minimize_scalar

from face.errors import ContractViolation
from face.landmarks import (
    SIGMA_FLOOR,
    NoiseSpec,
    LandmarkObservation,
    ObservationSet,
    calibration_summary,
    gnll_loss,
    landmark_noise_scales,
    project_landmarks,
    synth_observe,
)

from fd_helpers import random_parameters


def test_gnll_is_zero_at_unit_sigma_and_exact_mean():
    mu = np.array([[1.0, 2.0], [3.0, 4.0]])
    result = gnll_loss(mu, np.ones(2), mu)
    assert result.total == 0.0
    assert_allclose(result.per_landmark, 0.0)


def test_gnll_optimal_sigma_is_residual_over_root_two():
    r = 3.0
    mu, truth = np.array([[r, 0.0]]), np.zeros((1, 2))

    def loss(sigma):
        return gnll_loss(mu, np.array([sigma]), truth).total

    best = minimize_scalar(loss, bounds=(0.01, 10.0), method="bounded", options={"xatol": 1e-10})
    assert best.x == pytest.approx(r / np.sqrt(2.0), abs=1e-6)
    assert loss(r / np.sqrt(2.0)) == pytest.approx(np.log(r ** 2 / 2.0) + 1.0, abs=1e-12)


def test_gnll_weights_scale_terms():
    mu = np.array([[1.0, 1.0], [2.0, 0.0]])
    truth = np.zeros((2, 2))
    sigma = np.array([0.5, 2.0])
    plain = gnll_loss(mu, sigma, truth)
    weighted = gnll_loss(mu, sigma, truth, weights=np.array([2.0, 0.0]))
    assert weighted.total == pytest.approx(2.0 * plain.per_landmark[0])
    assert plain.total == pytest.approx(plain.per_landmark.sum())


def test_gnll_grows_away_from_the_mean():
    truth = np.array([[5.0, 5.0]])
    sigma = np.array([1.5])
    at_mean = gnll_loss(truth, sigma, truth).total
    for delta in (-0.1, 0.1):
        assert gnll_loss(truth + delta, sigma, truth).total > at_mean


def test_gnll_rejects_nonpositive_sigma():
    with pytest.raises(ContractViolation):
        gnll_loss(np.zeros((1, 2)), np.array([0.0]), np.zeros((1, 2)))


def test_noiseless_observations_equal_exact_projections(asset, mono_rig, mono_scene):
    truth, obs = mono_scene
    pixels, mask = project_landmarks(asset, truth, mono_rig)
    assert mask.all()
    assert len(obs) == asset.landmark_count
    assert np.array_equal(obs.mu, pixels[obs.frame_idx, obs.camera_idx, obs.landmark_idx])
    assert_allclose(obs.sigma, SIGMA_FLOOR)
    assert obs.ground_truth is truth


def test_observations_are_deterministic(asset, mono_rig, rng):
    truth = random_parameters(asset, rng, rig=mono_rig)
    a = synth_observe(asset, truth, mono_rig, NoiseSpec(), seed=21)
    b = synth_observe(asset, truth, mono_rig, NoiseSpec(), seed=21)
    c = synth_observe(asset, truth, mono_rig, NoiseSpec(), seed=22)
    assert np.array_equal(a.mu, b.mu)
    assert np.array_equal(a.sigma, b.sigma)
    assert not np.array_equal(a.mu, c.mu)


def test_calibrated_noise_has_reported_spread(asset, mono_rig, rng):
    # every landmark bound to one vertex gives 1e5 draws at a single scale
    dense = asset.with_landmarks(np.full(50000, asset.landmark_vertices[0]))
    truth = random_parameters(dense, rng, rig=mono_rig)
    noise = NoiseSpec(sigma_min=1.5, sigma_max=1.5)
    obs = synth_observe(dense, truth, mono_rig, noise, seed=4)
    pixels, _ = project_landmarks(dense, truth, mono_rig)
    errors = obs.mu - pixels[obs.frame_idx, obs.camera_idx, obs.landmark_idx]
    assert np.std(errors) == pytest.approx(1.5, rel=0.02)
    assert_allclose(obs.sigma, 1.5)
    summary = calibration_summary(obs, pixels)
    assert summary.within_one_sigma == pytest.approx(0.6827, abs=0.01)
    assert summary.within_two_sigma == pytest.approx(0.9545, abs=0.01)


def test_miscalibrated_noise_reports_constant_sigma(asset, mono_rig, rng):
    truth = random_parameters(asset, rng, rig=mono_rig)
    obs = synth_observe(asset, truth, mono_rig, NoiseSpec(mode="miscalibrated", constant_sigma=3.0), seed=2)
    assert_allclose(obs.sigma, 3.0)


def test_occluded_landmarks_get_inflated_sigma(asset, mono_rig, rng):
    truth = random_parameters(asset, rng, rig=mono_rig)
    noise = NoiseSpec(mode="occlusion", occluded_landmarks=[3, 10])
    obs = synth_observe(asset, truth, mono_rig, noise, seed=2)
    occluded = np.isin(obs.landmark_idx, [3, 10])
    assert obs.sigma[occluded].min() > obs.sigma[~occluded].max()
    assert obs.sigma[~occluded].max() <= noise.sigma_max


def test_landmarks_behind_camera_are_dropped(asset, mono_rig, rng, caplog):
    truth = random_parameters(asset, rng, rig=mono_rig)
    theta = truth.theta.copy()
    theta[0, -1] = -60.0
    with caplog.at_level(logging.WARNING, logger="face.landmarks"):
        obs = synth_observe(asset, truth.copy(theta=theta), mono_rig, NoiseSpec.noiseless(), seed=1)
    assert len(obs) == 0
    assert "behind-camera" in caplog.text


def test_observation_set_rejects_duplicates():
    with pytest.raises(ContractViolation):
        ObservationSet(
            frames=1, cameras=1, landmarks=3,
            frame_idx=np.array([0, 0]), camera_idx=np.array([0, 0]), landmark_idx=np.array([1, 1]),
            mu=np.zeros((2, 2)), sigma=np.ones(2),
        )


def test_observation_set_rejects_sigma_below_floor():
    with pytest.raises(ContractViolation):
        ObservationSet(
            frames=1, cameras=1, landmarks=3,
            frame_idx=np.array([0]), camera_idx=np.array([0]), landmark_idx=np.array([1]),
            mu=np.zeros((1, 2)), sigma=np.array([SIGMA_FLOOR / 2]),
        )


def test_for_camera_reindexes(stereo_scene):
    _, obs = stereo_scene
    single = obs.for_camera(1)
    assert single.cameras == 1
    assert np.all(single.camera_idx == 0)
    assert len(single) == int(np.sum(obs.camera_idx == 1))
    assert np.array_equal(single.mu, obs.mu[obs.camera_idx == 1])


def test_observation_records_rebuild_the_same_set(stereo_scene):
    _, obs = stereo_scene
    records = obs.observations
    assert len(records) == len(obs)
    assert isinstance(records[0], LandmarkObservation)
    rebuilt = ObservationSet.from_observations(records, obs.frames, obs.cameras, obs.landmarks)
    assert np.array_equal(rebuilt.frame_idx, obs.frame_idx)
    assert np.array_equal(rebuilt.camera_idx, obs.camera_idx)
    assert np.array_equal(rebuilt.landmark_idx, obs.landmark_idx)
    assert_allclose(rebuilt.mu, obs.mu)
    assert_allclose(rebuilt.sigma, obs.sigma)


def test_record_outside_the_landmark_range_is_rejected():
    with pytest.raises(ContractViolation):
        ObservationSet.from_observations([LandmarkObservation(0, 0, 5, (1.0, 2.0), 1.0)], 1, 1, 3)


@pytest.mark.parametrize("ids", [[3, 68], [-1], [1000]])
def test_occluded_ids_out_of_range_are_rejected(ids):
    noise = NoiseSpec(mode="occlusion", occluded_landmarks=ids)
    with pytest.raises(ContractViolation, match="out of range"):
        landmark_noise_scales(noise, 68, seed=0)


def test_occluded_ids_at_the_range_edges_are_accepted():
    noise = NoiseSpec(mode="occlusion", occluded_landmarks=[0, 67])
    _, occluded = landmark_noise_scales(noise, 68, seed=0)
    assert np.flatnonzero(occluded).tolist() == [0, 67]
