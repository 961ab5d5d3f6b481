from __future__ import annotations

import numpy as np
import pytest

from lfseg.synthgen import (
    BackgroundSpec,
    ObjectSpec,
    SceneSpec,
    generate,
    make_random_scene,
)


def occluder_spec(seed: int, patch_grid: int = 128) -> SceneSpec:
    """A static far square partially occluded by a nearer square away from
    the middle view; per-pixel features (patch_grid = image size) by default."""
    return SceneSpec(
        dims=(9, 9, 128, 128),
        objects=(
            ObjectSpec("rect", (44, 44, 40, 40), 0.0,
                       feature_seed=seed * 10 + 1, texture_seed=seed * 10 + 2),
            ObjectSpec("rect", (54, 23, 20, 20), 3.0,
                       feature_seed=seed * 10 + 3, texture_seed=seed * 10 + 4),
        ),
        background=BackgroundSpec(disparity=-1.0, feature_seed=seed * 10 + 5,
                                  texture_seed=seed * 10 + 6),
        feature_dim=32,
        patch_grid=patch_grid,
        noise_sigma=0.01,
        rng_seed=seed,
    )


@pytest.fixture(scope="session")
def small_scene():
    """5x5 views, 48x48 px, two objects; fast enough for per-test use."""
    return generate(make_random_scene((5, 5, 48, 48), 2, seed=3, patch_grid=24))


@pytest.fixture(scope="session")
def nine_scene():
    """9x9 views, 64x64 px, three objects."""
    return generate(make_random_scene((9, 9, 64, 64), 3, seed=5, patch_grid=32))


@pytest.fixture(scope="session")
def occluder_scene():
    return generate(occluder_spec(seed=1))


@pytest.fixture(scope="session")
def zero_disparity_scene():
    """Objects at d=0: every object mask is identical across views."""
    spec = SceneSpec(
        dims=(5, 5, 48, 48),
        objects=(
            ObjectSpec("rect", (8, 8, 12, 12), 0.0, feature_seed=21, texture_seed=22),
            ObjectSpec("disc", (32, 32, 7), 0.0, feature_seed=23, texture_seed=24),
        ),
        background=BackgroundSpec(disparity=-1.0, feature_seed=25, texture_seed=26),
        feature_dim=16,
        patch_grid=48,
        noise_sigma=0.01,
        rng_seed=9,
    )
    return generate(spec)


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
