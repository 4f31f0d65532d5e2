import numpy as np
import pytest

from cavity_chaos.state import ModelParams, SystemState


def random_state(rng, N=6, tau=0.0, scale=1.0):
    """Normalized random state with random classical coordinates."""
    q = rng.standard_normal(4 * (N + 1))
    q *= scale / np.linalg.norm(q)
    y = np.concatenate([[rng.uniform(-np.pi, np.pi), rng.uniform(-30, 30)], q])
    return SystemState.from_vector(y, tau)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_params():
    return ModelParams(kappa=0.001, delta=0.4, truncation=30)


ACCEPTANCE_LINES = []


def acceptance_report(label: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
