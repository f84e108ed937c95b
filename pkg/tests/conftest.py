import numpy as np
import pytest

from bayespls.glm import Dataset, ModelSpec


def random_instance(rng, n=20, d=3, scale=1.0, weighted=False):
    X = rng.standard_normal((n, d))
    X[:, 0] = 1.0
    theta = scale * rng.standard_normal(d)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-X @ theta))).astype(float)
    w = rng.uniform(0.5, 2.0, n) if weighted else None
    return Dataset(X, y, w), theta


def random_spec(rng, d):
    A = rng.standard_normal((d, d))
    P = A @ A.T + d * np.eye(d)
    return ModelSpec(0.3 * rng.standard_normal(d), P)


@pytest.fixture
def rng():
    return np.random.default_rng(20261017)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one verdict line per acceptance criterion."""

    def emit(number, passed, detail):
        line = f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
