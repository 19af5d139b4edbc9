import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    from triscene.config import TrainConfig

    return TrainConfig(iterations=6, iterations_per_epoch=2, batch_size=2, triplane_resolution=16,
                       triplane_channels=4, patch_size=16, n_samples=8, g_channel_base=256,
                       g_channel_max=32, d_channel_base=256, d_channel_max=32, n_cameras=16,
                       checkpoint_every=3, metric_every=3, eval_patches=4, diversity_latents=2,
                       diversity_resolution=8, seed=3)


@pytest.fixture
def tiny_images():
    g = torch.Generator().manual_seed(0)
    return torch.rand(3, 32, 32, 3, generator=g)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(module.RESULTS):
        terminalreporter.write_line(line)
