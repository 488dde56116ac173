import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ikd import oracles
from ikd.engine import Tensor

settings.register_profile("ci", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_check(build, tensors, eps=1e-5):
    """Max per-coordinate relative error of engine grads vs central differences."""
    from ikd import engine

    analytic = np.concatenate(engine.grad(build(), tensors), axis=None)
    numeric = oracles.fd_gradient(lambda _: build().item(), tensors, eps)
    return oracles.compare(analytic, numeric).max_rel_err


def leaf(values):
    return Tensor(values, requires_grad=True)


# filled by tests/test_acceptance.py; printed after the run so capture never hides it
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
