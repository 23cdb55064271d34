import logging

import pytest
import torch
from hypothesis import HealthCheck, settings

from mtof.synth_gen import SynthConfig, gen_samples

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_samples():
    """2 objects x 10 views x (1 real + 3 displays) at 16x16."""
    cfg = SynthConfig.from_dict(
        {"n_objects": 2, "samples_per_object": 10, "n_profiles": 3, "image_size": [16, 16], "seed": 3}
    )
    return gen_samples(cfg)


@pytest.fixture
def quiet_logs(caplog):
    caplog.set_level(logging.INFO)
    return caplog


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
