import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ferl.envs import Scene
from ferl.kinematics import KinematicChain

settings.register_profile("ferl", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ferl")


@pytest.fixture(scope="session")
def chain():
    return KinematicChain()


@pytest.fixture(scope="session")
def scene():
    return Scene()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_diff(f, x, h=1e-6):
    """Central finite differences of a scalar function of an array."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE = {}


def record(criterion, ok, detail, seconds):
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  ({seconds:.1f} s)  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
