import numpy as np
import pytest

from roifield import scenes
from roifield.geometry import RoiBox


@pytest.fixture(scope="session")
def demo_scene():
    return scenes.load_scene("demo")


@pytest.fixture(scope="session")
def demo_field(demo_scene):
    return demo_scene.load_field()


@pytest.fixture
def unit_box():
    return RoiBox(center=(0.0, 0.0, 0.0), dims=(2.0, 2.0, 2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
