import os

import numpy as np
import pytest

from wkblab.config import load_config

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")

# filled by test_acceptance.py, printed once at the end of the session
ACCEPTANCE = {}


def config_path(name):
    return os.path.abspath(os.path.join(CONFIGS, name))


def load_into(name, out, *extra):
    """Load a shipped config, redirecting its output to ``out``."""
    return load_config(config_path(name), [f"experiment.output={out}", *extra])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{num:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
