import dataclasses
import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial.transform import Rotation

from face.camera import project_points
from face.energy import (
    EnergyConfig,
    ParameterLayout,
    TermWeights,
    active_mask,
    assemble,
    energy_terms,
    hull_depth,
    residual_expression,
    residual_intersect,
    residual_joints,
    system_jacobian,
)
from face.errors import ContractViolation
from face.face_model import Parameters, bind_joints, mesh_generate
from face.landmarks import NoiseSpec, synth_observe
from face.priors import GmmPrior, gmm_log_prob
from face.solver import accumulate_normal_equations, dense_normal_equations
from face.toy_asset import BASE_JOINTS, NECK, box_hull

from fd_helpers import central_difference, random_parameters


def _perturbed(truth, rng, scale=0.01):
    return truth.copy(
        beta=truth.beta + rng.normal(scale=scale, size=truth.beta.shape),
        psi=truth.psi + rng.normal(scale=scale, size=truth.psi.shape),
        theta=truth.theta + rng.normal(scale=scale, size=truth.theta.shape),
        focal=truth.focal * (1.0 + scale),
    )


def _unit_prior(asset):
    d = asset.identity_dims
    return GmmPrior.create([1.0], np.zeros((1, d)), 0.5 * np.eye(d)[None])


@pytest.fixture(scope="module")
def guarded_asset(asset):
    """Eyeball spheres and a teeth box large enough to contain their guarded vertices"""
    eyes = tuple(dataclasses.replace(eye, radius=5.0) for eye in asset.eyeballs)
    box = box_hull(np.array([-10.0, -15.0, -20.0]), np.array([10.0, 0.0, 0.0]), BASE_JOINTS[NECK])
    return dataclasses.replace(asset, eyeballs=eyes, teeth_hulls=(box,))


@pytest.fixture(scope="module")
def unit_sigma_obs(stereo_scene):
    _, obs = stereo_scene
    return obs.with_sigma(np.ones(len(obs)))


def test_exact_data_has_zero_energy(asset, stereo_rig, stereo_scene):
    truth, obs = stereo_scene
    config = EnergyConfig(term_weights=TermWeights.data_only())
    system = assemble(asset, truth, stereo_rig, obs, None, config)
    assert system.total_energy < 1e-18
    assert system.dropped == 0


def _neutral(asset):
    params = Parameters.zeros(asset)
    theta = params.theta.copy()
    theta[0, -1] = 60.0
    return params.copy(theta=theta)


def test_zero_regularizers_at_neutral_parameters(asset, mono_rig):
    neutral = _neutral(asset)
    obs = synth_observe(asset, neutral, mono_rig, NoiseSpec.noiseless(), seed=0)
    terms = energy_terms(asset, neutral, mono_rig, obs, None, EnergyConfig(intersect=False))
    assert terms["landmarks"] < 1e-18
    assert terms["expression"] == 0.0
    assert terms["joints"] == 0.0


def test_total_is_sum_of_terms(asset, stereo_rig, stereo_scene, prior, rng):
    truth, obs = stereo_scene
    system = assemble(asset, _perturbed(truth, rng), stereo_rig, obs, prior, EnergyConfig())
    terms = system.term_energies()
    assert set(terms) == {"landmarks", "identity", "expression", "joints", "temporal", "intersect"}
    assert system.total_energy == pytest.approx(sum(terms.values()), rel=1e-14)


def test_landmark_energy_matches_direct_evaluation(asset, stereo_rig, stereo_scene, rng):
    truth, obs = stereo_scene
    params = _perturbed(truth, rng)
    config = EnergyConfig(term_weights=TermWeights.data_only())
    energy = assemble(asset, params, stereo_rig, obs, None, config).term_energies()["landmarks"]

    rig = stereo_rig.with_parameters(params.cam_rot, params.cam_trans, params.focal)
    expected = 0.0
    for i in range(params.frames):
        points = mesh_generate(asset, params, i)[asset.landmark_vertices]
        for j in range(rig.count):
            sel = (obs.frame_idx == i) & (obs.camera_idx == j)
            pixels = project_points(rig, j, points[obs.landmark_idx[sel]])
            err = np.sum((pixels - obs.mu[sel]) ** 2, axis=1)
            expected += np.sum(asset.landmark_weights[obs.landmark_idx[sel]] * err / (2 * obs.sigma[sel] ** 2))
    assert energy == pytest.approx(expected, rel=1e-9)


def test_regularizer_energies_match_closed_forms(asset, stereo_rig, stereo_scene, prior, rng):
    truth, obs = stereo_scene
    params = _perturbed(truth, rng)
    weights = TermWeights(identity=0.7, expression=0.3, joints=0.2, temporal=0.05, intersect=0.0)
    terms = energy_terms(asset, params, stereo_rig, obs, prior, EnergyConfig(term_weights=weights))
    K = asset.joint_count
    assert terms["identity"] == pytest.approx(-0.7 * gmm_log_prob(prior, params.beta), rel=1e-12)
    assert terms["expression"] == pytest.approx(0.3 * np.sum(params.psi ** 2), rel=1e-12)
    assert terms["joints"] == pytest.approx(0.2 * np.sum(params.theta[:, 3: 3 * K] ** 2), rel=1e-12)

    rig = stereo_rig.with_parameters(params.cam_rot, params.cam_trans, params.focal)
    meshes = [mesh_generate(asset, params, i)[asset.landmark_vertices] for i in range(params.frames)]
    temporal = sum(
        np.sum((project_points(rig, j, meshes[i]) - project_points(rig, j, meshes[i - 1])) ** 2)
        for i in range(1, params.frames)
        for j in range(rig.count)
    )
    assert terms["temporal"] == pytest.approx(0.05 * temporal, rel=1e-9)


def test_expression_term_example(asset):
    params = Parameters.zeros(asset)
    psi = np.zeros((1, asset.expression_dims))
    psi[0, 3] = 1.0
    layout = ParameterLayout.for_problem(asset, 1, 1)
    blocks = residual_expression(params.copy(psi=psi), 1.0, layout)
    assert sum(b.energy for b in blocks) == pytest.approx(1.0)


def test_joint_term_ignores_root(asset):
    layout = ParameterLayout.for_problem(asset, 1, 1)
    theta = np.zeros((1, asset.pose_dims))
    theta[0, 0:3] = [0.5, 0.5, 0.5]
    theta[0, -3:] = [1.0, 2.0, 60.0]
    params = Parameters.zeros(asset).copy(theta=theta)
    assert sum(b.energy for b in residual_joints(params, 1.0, layout)) == 0.0
    theta[0, 3] = 0.1
    params = params.copy(theta=theta)
    assert sum(b.energy for b in residual_joints(params, 1.0, layout)) == pytest.approx(0.01)


def test_identical_frames_have_zero_temporal_energy(asset, stereo_rig, stereo_scene):
    truth, obs = stereo_scene
    still = truth.copy(psi=np.repeat(truth.psi[:1], 2, axis=0), theta=np.repeat(truth.theta[:1], 2, axis=0))
    terms = energy_terms(asset, still, stereo_rig, obs, None, EnergyConfig(intersect=False))
    assert terms["temporal"] == 0.0


def test_hull_depth_unit_cube():
    normals = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
    offsets = np.array([-1.0, 0.0, -1.0, 0.0, -1.0, 0.0])
    points = np.array([[0.9, 0.5, 0.5], [1.0, 0.5, 0.5], [2.0, 0.5, 0.5]])
    depth, plane = hull_depth(normals, offsets, points)
    assert_allclose(depth, [0.1, 0.0, 0.0], atol=1e-12)
    assert plane[0] == 0


def test_intersection_is_zero_for_the_toy_head_at_rest(asset):
    blocks = residual_intersect(asset, _neutral(asset), 10.0)
    assert blocks
    assert sum(b.energy for b in blocks) == 0.0


def test_intersection_jacobian_matches_finite_differences(guarded_asset, mono_scene):
    truth, _ = mono_scene
    nb, ne = guarded_asset.identity_dims, guarded_asset.expression_dims
    blocks = residual_intersect(guarded_asset, truth, 10.0)
    residuals = np.concatenate([b.residual for b in blocks])
    assert np.all(residuals > 0)
    assert {b.index[1] for b in blocks} == {0, 1}

    def evaluate(z):
        moved = truth.copy(beta=z[:nb], psi=z[None, nb: nb + ne], theta=z[None, nb + ne:])
        return np.concatenate([b.residual for b in residual_intersect(guarded_asset, moved, 10.0)])

    z = np.concatenate([truth.beta, truth.psi[0], truth.theta[0]])
    numeric = central_difference(evaluate, z)
    analytic = np.concatenate([b.full_jacobian for b in blocks])
    assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-6)


def test_energy_gradient_matches_finite_differences(asset, stereo_rig, stereo_scene, unit_sigma_obs, rng):
    truth, _ = stereo_scene
    prior = _unit_prior(asset)
    params = _perturbed(truth, rng)
    config = EnergyConfig(intersect=False)
    layout = ParameterLayout.for_problem(asset, params.frames, params.cameras)
    active = active_mask(layout, stereo_rig)
    system = assemble(asset, params, stereo_rig, unit_sigma_obs, prior, config, active)
    gradient = 2.0 * dense_normal_equations(system).jtr

    x = layout.pack(params)
    idx = np.flatnonzero(active)

    def energy(sub):
        full = x.copy()
        full[idx] = sub
        return assemble(asset, layout.unpack(full), stereo_rig, unit_sigma_obs, prior, config, active).total_energy

    numeric = central_difference(energy, x[idx])
    assert_allclose(gradient, numeric, rtol=1e-5, atol=1e-7 * np.abs(gradient).max())


def test_blocks_vanish_outside_their_sparsity_sets(guarded_asset, stereo_rig, prior, rng):
    truth = random_parameters(guarded_asset, rng, frames=2, rig=stereo_rig)
    obs = synth_observe(guarded_asset, truth, stereo_rig, NoiseSpec(), seed=3)
    system = assemble(guarded_asset, _perturbed(truth, rng), stereo_rig, obs, prior, EnergyConfig())
    assert {b.kind for b in system.blocks} == {"landmarks", "identity", "expression", "joints", "temporal", "intersect"}
    for block in system.blocks:
        assert np.all(block.full_jacobian[:, ~block.static] == 0.0), block.kind
    assert any((~b.static).any() for b in system.blocks if b.kind == "landmarks")


def test_sparse_accumulation_equals_dense_at_zero_threshold(asset, stereo_rig, stereo_scene, prior, rng):
    truth, obs = stereo_scene
    system = assemble(asset, _perturbed(truth, rng), stereo_rig, obs, prior, EnergyConfig())
    sparse = accumulate_normal_equations(system, system_jacobian(system, EnergyConfig()))
    dense = dense_normal_equations(system)
    assert_allclose(sparse.jtj, dense.jtj, rtol=1e-10, atol=1e-10 * np.abs(dense.jtj).max())
    assert_allclose(sparse.jtr, dense.jtr, rtol=1e-10, atol=1e-10 * np.abs(dense.jtr).max())


def test_infinite_threshold_drops_everything(asset, stereo_rig, stereo_scene, rng):
    truth, obs = stereo_scene
    config = EnergyConfig(sparsity_threshold=float("inf"))
    system = assemble(asset, _perturbed(truth, rng), stereo_rig, obs, None, config)
    normal = accumulate_normal_equations(system, system_jacobian(system, config))
    assert not normal.jtj.any()
    assert not normal.jtr.any()


def test_landmark_blocks_depend_only_on_their_camera(asset, stereo_rig, stereo_scene):
    truth, obs = stereo_scene
    system = assemble(asset, truth, stereo_rig, obs, None, EnergyConfig())
    layout = system.layout
    for block in system.blocks:
        if block.kind != "landmarks":
            continue
        other = layout.camera(1 - block.index[1])
        assert not np.isin(block.params, other).any()
        assert not np.isin(block.params, layout.psi(1 - block.index[0])).any()


def test_raising_sigma_only_shrinks_that_block(asset, stereo_rig, stereo_scene, unit_sigma_obs, rng):
    truth, _ = stereo_scene
    params = _perturbed(truth, rng)
    config = EnergyConfig()
    before = assemble(asset, params, stereo_rig, unit_sigma_obs, None, config)
    sigma = unit_sigma_obs.sigma.copy()
    sigma[0] = 2.0
    after = assemble(asset, params, stereo_rig, unit_sigma_obs.with_sigma(sigma), None, config)
    target = ("landmarks", (int(unit_sigma_obs.frame_idx[0]), int(unit_sigma_obs.camera_idx[0]),
                            int(unit_sigma_obs.landmark_idx[0])))
    assert len(before.blocks) == len(after.blocks)
    for old, new in zip(before.blocks, after.blocks):
        if (old.kind, old.index) == target:
            assert new.energy < old.energy
        else:
            assert np.array_equal(old.residual, new.residual)


def test_constant_sigma_replaces_observed_sigma(asset, stereo_rig, stereo_scene, unit_sigma_obs, rng):
    truth, _ = stereo_scene
    params = _perturbed(truth, rng)
    config = EnergyConfig(term_weights=TermWeights.data_only(), use_sigma=False, constant_sigma=1.0)
    scrambled = unit_sigma_obs.with_sigma(np.linspace(0.5, 3.0, len(unit_sigma_obs)))
    a = assemble(asset, params, stereo_rig, scrambled, None, config).total_energy
    b = assemble(asset, params, stereo_rig, unit_sigma_obs, None, config.model_copy(update={"use_sigma": True}))
    assert a == pytest.approx(b.total_energy, rel=1e-12)


def test_behind_camera_observations_are_dropped(asset, mono_rig, mono_scene, caplog):
    truth, obs = mono_scene
    theta = truth.theta.copy()
    theta[0, -1] = -60.0
    with caplog.at_level(logging.WARNING, logger="face.energy"):
        system = assemble(asset, truth.copy(theta=theta), mono_rig, obs, None, EnergyConfig())
    assert system.dropped == len(obs)
    assert not [b for b in system.blocks if b.kind == "landmarks"]
    assert "behind camera" in caplog.text


def test_prior_dimension_mismatch_names_identity(asset, mono_rig, mono_scene):
    truth, obs = mono_scene
    wrong = GmmPrior.create([1.0], np.zeros((1, 3)), np.eye(3)[None])
    with pytest.raises(ContractViolation, match="identity"):
        assemble(asset, truth, mono_rig, obs, wrong, EnergyConfig())


def test_observations_must_match_problem(asset, stereo_rig, mono_scene):
    truth, obs = mono_scene
    two_cameras = truth.copy(cam_rot=stereo_rig.rotations, cam_trans=stereo_rig.translations, focal=stereo_rig.focals)
    with pytest.raises(ContractViolation):
        assemble(asset, two_cameras, stereo_rig, obs, None, EnergyConfig())


def test_active_mask_fixes_the_gauge(asset, mono_rig, stereo_rig):
    layout = ParameterLayout.for_problem(asset, 1, 1)
    mask = active_mask(layout, mono_rig)
    assert not mask[layout.camera(0)[:6]].any()
    assert mask[layout.camera(0)[6]]

    layout = ParameterLayout.for_problem(asset, 1, 2)
    mask = active_mask(layout, stereo_rig)
    assert not mask[layout.camera(0)[:6]].any()
    assert mask[layout.camera(1)].all()

    mask = active_mask(layout, stereo_rig, ["identity", "focal"])
    assert not mask[layout.beta()].any()
    assert not mask[layout.group("focal")].any()


def test_landmark_weight_must_stay_one():
    with pytest.raises(ValueError):
        TermWeights(landmarks=2.0)


def test_energy_is_invariant_under_rigid_regauging(asset, stereo_rig, stereo_scene, prior, rng):
    truth, obs = stereo_scene
    params = _perturbed(truth, rng)
    gauge = Rotation.from_rotvec([0.1, -0.2, 0.05])
    shift = np.array([1.0, -2.0, 0.5])
    K = asset.joint_count
    J0 = bind_joints(asset, params.beta)[0]

    theta = params.theta.copy()
    for i in range(params.frames):
        R0 = Rotation.from_rotvec(theta[i, 0:3])
        b0 = J0 - R0.apply(J0) + theta[i, 3 * K:]
        root = gauge * R0
        theta[i, 0:3] = root.as_rotvec()
        theta[i, 3 * K:] = gauge.apply(b0) + shift - J0 + root.apply(J0)
    cameras = [Rotation.from_rotvec(r) * gauge.inv() for r in params.cam_rot]
    moved = params.copy(
        theta=theta,
        cam_rot=np.stack([c.as_rotvec() for c in cameras]),
        cam_trans=np.stack([t - c.apply(shift) for t, c in zip(params.cam_trans, cameras)]),
    )
    # the gauge-fixed camera moved too, so free every camera parameter
    layout = ParameterLayout.for_problem(asset, params.frames, params.cameras)
    active = np.ones(layout.size, dtype=bool)
    before = assemble(asset, params, stereo_rig, obs, prior, EnergyConfig(), active)
    after = assemble(asset, moved, stereo_rig, obs, prior, EnergyConfig(), active)
    assert after.total_energy == pytest.approx(before.total_energy, rel=1e-8)
    for name, value in before.term_energies().items():
        assert after.term_energies()[name] == pytest.approx(value, rel=1e-8, abs=1e-12)
