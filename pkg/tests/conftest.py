import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rcpo.cmdp import TabularCMDP

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_policy(rng, n_states, n_actions):
    pi = rng.random((n_states, n_actions)) + 0.05
    return pi / pi.sum(axis=1, keepdims=True)


def two_state_cmdp(gamma=0.9):
    """Hand-set 2-state, 2-action CMDP used across several tests."""
    P = np.array([[[0.8, 0.2], [0.1, 0.9]],
                  [[0.5, 0.5], [0.3, 0.7]]])
    R = np.array([[1.0, 0.0], [0.5, 2.0]])
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    return TabularCMDP(P, R, C, np.array([1.0, 0.0]), gamma)


def chain_cmdp(n=3, gamma=0.9):
    """Left-to-right chain; action 1 advances (reward 1, penalty 1), action 0 stays."""
    P = np.zeros((n, 2, n))
    R = np.zeros((n, 2))
    C = np.zeros((n, 2))
    for s in range(n):
        P[s, 0, s] = 1.0
        P[s, 1, min(s + 1, n - 1)] = 1.0
        R[s] = [0.1, 1.0]
        C[s] = [0.0, 1.0]
    mu = np.zeros(n)
    mu[0] = 1.0
    return TabularCMDP(P, R, C, mu, gamma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one summary line per acceptance criterion."""
    def report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
