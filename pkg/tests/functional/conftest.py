"""Fixtures for end-to-end training tests."""

import numpy as np
import pytest

from bench.dataset import generate_benchmark
from bench.scenes import Sample, Scene, SceneConfig, SceneObject, render_scene
from sensors.language import Vocabulary
from utils.helpers import env_bool

SLOW_ENV = "CPRN_RUN_SLOW"


def pytest_collection_modifyitems(config, items):
    if env_bool(SLOW_ENV):
        return
    skip = pytest.mark.skip(reason=f"set {SLOW_ENV}=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def square_sample():
    """One red square on pixels 8..19 of a 32 x 32 image, referred to as 'the red square'."""
    square = SceneObject(object_id=0, shape="square", color="red", size="large", center=(13.5, 13.5), extent=5.5)
    pixels, masks = render_scene([square], 32)
    text = "the red square"
    return Sample(sample_id=0, scene=Scene(pixels, [square], masks), tokens=Vocabulary().encode(text),
                  text=text, referent=0, mask=masks[0])


@pytest.fixture
def aligned_square_sample():
    """A red square on pixels 16..31 of a 64 x 64 image; its edges fall on the stride-4 grid."""
    square = SceneObject(object_id=0, shape="square", color="red", size="large", center=(23.5, 23.5), extent=7.5)
    pixels, masks = render_scene([square], 64)
    text = "the red square"
    return Sample(sample_id=0, scene=Scene(pixels, [square], masks), tokens=Vocabulary().encode(text),
                  text=text, referent=0, mask=masks[0])


@pytest.fixture(scope="session")
def benchmark_root(tmp_path_factory):
    """The desk-scale benchmark: 1,000 train and 200 val samples at 64 x 64."""
    root = tmp_path_factory.mktemp("benchmark")
    generate_benchmark(root, seed=0, train_count=1000, val_count=200, config=SceneConfig(), workers=4)
    return root


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """Small generated benchmark shared by the end-to-end tests."""
    root = tmp_path_factory.mktemp("synth")
    generate_benchmark(root, seed=5, train_count=6, val_count=4,
                       config=SceneConfig(image_size=32, small_fraction=0.5, complex_fraction=0.5))
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(99)
