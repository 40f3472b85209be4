import numpy as np
import pytest

from follmerlab.config import load_config, load_target

# Acceptance lines collected by tests/test_acceptance.py and printed after the run.
ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def target():
    return load_target


@pytest.fixture
def config():
    return load_config


def marginal_points(target, t, n, seed):
    """Draws of X_t = t X_1 + sqrt(1 - t^2) C^{1/2} Z, built without package samplers."""
    rng = np.random.default_rng(seed)
    x1 = target.sample(n, seed)
    root = np.linalg.cholesky(target.C)
    z = rng.standard_normal((n, target.dim)) @ root.T
    return t * x1 + np.sqrt(1.0 - t * t) * z
