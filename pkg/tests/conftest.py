import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from subnet_nas.model import ModelDims

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# Filled by tests/test_acceptance.py, printed at the end of the session.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def tiny_dims():
    return ModelDims(n_layers=2, n_heads=2, n_units=4, d_model=8, d_head=4, vocab_size=11, max_len=6, n_classes=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
