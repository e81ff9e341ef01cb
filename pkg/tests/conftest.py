import numpy as np
import pytest
import torch

from wmd.data.synthetic import SyntheticRenderer, SyntheticSceneConfig
from wmd.data.types import ActionClass, FrameRGBD, LabelTrack


def pytest_configure(config):
    torch.set_num_threads(max(1, torch.get_num_threads()))


def make_frames(n, size=8, fps=30.0, value=0):
    """Cheap uniform frames for stream-level operations."""
    return [
        FrameRGBD(
            rgb=np.full((size, size, 3), value, dtype=np.uint8),
            depth=np.full((size, size), 1000, dtype=np.uint16),
            timestamp=i / fps,
        )
        for i in range(n)
    ]


def frames_from_values(values, size=4, fps=15.0):
    """Frames whose rgb is uniformly one value each; handy for DIF/ADD math."""
    return [
        FrameRGBD(
            rgb=np.full((size, size, 3), v, dtype=np.uint8),
            depth=np.full((size, size), 1000, dtype=np.uint16),
            timestamp=i / fps,
        )
        for i, v in enumerate(values)
    ]


@pytest.fixture(scope="session")
def walk_renderer():
    """Small noise-free trial renderer shared by render-oracle tests."""
    cfg = SyntheticSceneConfig.desk(
        noise_level=0.0, gait_speed=1.0, circuit="right_wide", resolution=160
    )
    return SyntheticRenderer(cfg, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def track(source, *pairs):
    return LabelTrack(source=source, transitions=tuple((t, ActionClass(c)) for t, c in pairs))
