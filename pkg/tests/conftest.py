import sys

import numpy as np
import pytest

from driveflow.data import InputConfig, SceneParams, generate_synthetic_scene, prepare_inputs
from driveflow.models import BackboneSpec, FusionSpec, PointNetSpec, build_io_model, build_pcm_model, build_pn_model
from driveflow.pointcloud import ProjectionConfig

TINY_SCENE = SceneParams(image_height=16, image_width=24, ground_points=96, obstacle_points=16, counts=(6, 2, 2))
TINY_IMAGE = BackboneSpec("tinyconv", (3, 16, 24), (4, 6), (8,))
TINY_PROJ = ProjectionConfig(90, 26.8, 12, 24, 120)
TINY_DEPTH = BackboneSpec("tinyconv", (2, 12, 24), (3, 5), ())
TINY_PN = PointNetSpec((8, 16), num_points=32)
TINY_FUSION = FusionSpec(12)


def tiny_model(kind, seed=0):
    if kind == "io":
        return build_io_model(TINY_IMAGE, seed)
    if kind == "pcm":
        return build_pcm_model(TINY_IMAGE, TINY_DEPTH, TINY_FUSION, seed)
    return build_pn_model(TINY_IMAGE, TINY_PN, TINY_FUSION, seed)


@pytest.fixture(scope="session")
def tiny_samples():
    return [generate_synthetic_scene(TINY_SCENE, i, 3) for i in range(6)]


@pytest.fixture
def tiny_batch(tiny_samples):
    def make(model):
        return prepare_inputs(tiny_samples, model, InputConfig(projection=TINY_PROJ))
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[n])
