"""Shared pytest fixtures for all tests."""

import sys
from pathlib import Path

import pytest

# Add the project root to the Python path for all tests
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from core.tensor import set_default_dtype  # noqa: E402


@pytest.fixture(autouse=True)
def float64_default():
    """Every test starts and ends in double precision."""
    set_default_dtype("float64")
    yield
    set_default_dtype("float64")


@pytest.fixture
def tiny_config():
    """Two-stage 32 x 32 run small enough for unit tests."""
    from config.train_config import TrainConfig
    return TrainConfig(image_size=32, channels=4, word_dim=4, stages=2, ffn_hidden=4, batch_size=2,
                       epochs=1, learning_rate=1e-2, log_every=1)


@pytest.fixture(scope="session")
def tiny_samples():
    """Six regular-scale, simple-language 32 x 32 samples."""
    from bench.scenes import SceneConfig, SceneGenerator
    return SceneGenerator(SceneConfig(image_size=32, small_fraction=0.0, complex_fraction=0.0)).generate(
        seed=2, count=6)
