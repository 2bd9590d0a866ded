import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from mtdeblur import ModelConfig, make_synthetic

settings.register_profile(
    "ci",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("ci")

torch.set_num_threads(max(1, torch.get_num_threads()))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_cfg():
    """Smallest non-degenerate model: 2 stacks, 4 channels, search radius 2."""
    return ModelConfig(num_stacks=2, feature_channels=4, max_displacement=2)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """1 train + 1 test video, 14 frames, 32x32, seeded; shared read-only."""
    root = tmp_path_factory.mktemp("small_ds")
    make_synthetic(
        root,
        train_videos=1,
        test_videos=1,
        frames=14,
        height=32,
        width=32,
        max_speed=4.0,
        blur_steps=5,
        seed=5,
    )
    return root


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one pass/fail line per acceptance criterion after the run."""
    import _acceptance_log

    lines = _acceptance_log.render()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
