import os
import tempfile

# Point the service at a throwaway database before anything imports app.*
_TEST_DATA = tempfile.mkdtemp(prefix="face-fit-tests-")
os.environ["DATABASE_URL"] = f"sqlite:///{_TEST_DATA}/test_fits.db"
os.environ["DATA_DIR"] = _TEST_DATA

import numpy as np
import pytest

from face.camera import CameraConfig, build_rig, ring_cameras
from face.landmarks import NoiseSpec, synth_observe
from face.priors import synth_identity_prior
from face.toy_asset import synth_toy_asset

from fd_helpers import random_parameters

ASSET_SEED = 3
IDENTITY_DIMS = 8
EXPRESSION_DIMS = 10


@pytest.fixture(scope="session")
def asset():
    return synth_toy_asset(ASSET_SEED, identity_dims=IDENTITY_DIMS, expression_dims=EXPRESSION_DIMS, landmark_count=68)


@pytest.fixture(scope="session")
def prior():
    return synth_identity_prior(ASSET_SEED, IDENTITY_DIMS, components=2, samples_per_component=100)


@pytest.fixture(scope="session")
def mono_rig():
    return build_rig([CameraConfig(focal=1000.0)])


@pytest.fixture(scope="session")
def stereo_rig():
    return build_rig(ring_cameras(2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mono_scene(asset, mono_rig):
    """One frame, one camera, noiseless"""
    truth = random_parameters(asset, np.random.default_rng(11), rig=mono_rig)
    obs = synth_observe(asset, truth, mono_rig, NoiseSpec.noiseless(), seed=5)
    return truth, obs


@pytest.fixture(scope="session")
def stereo_scene(asset, stereo_rig):
    """Two frames, two cameras, noiseless"""
    truth = random_parameters(asset, np.random.default_rng(12), frames=2, rig=stereo_rig)
    obs = synth_observe(asset, truth, stereo_rig, NoiseSpec.noiseless(), seed=6)
    return truth, obs
