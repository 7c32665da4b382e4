import numpy as np
import pytest

from mvworld.worldsim import CameraSpec, WorldConfig, full_grid_camera


@pytest.fixture
def tiny_world() -> WorldConfig:
    """12-cell grid, two agents, three landmarks, two full-grid views."""
    return WorldConfig(
        grid_size=12,
        num_agents=2,
        num_landmarks=3,
        cameras=(full_grid_camera(12, rotation=0), full_grid_camera(12, rotation=90)),
    )


@pytest.fixture
def crop_world() -> WorldConfig:
    """Small grid watched by two overlapping partial views."""
    return WorldConfig(
        grid_size=6,
        num_agents=2,
        num_landmarks=1,
        cameras=(
            CameraSpec(crop_origin=(0, 0), crop_size=(4, 6), rotation=0),
            CameraSpec(crop_origin=(2, 0), crop_size=(4, 6), rotation=0),
        ),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(1234))
