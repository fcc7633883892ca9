import numpy as np
import pytest

from debiased_irl.fixtures import random_mdp, ring2, ring2_n

ACCEPTANCE = {}


def record_acceptance(criterion, passed, detail):
    """Store one acceptance outcome for the end-of-session report."""
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"ACCEPTANCE {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[criterion]
        terminalreporter.write_line(f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def ring2_problem():
    return ring2()


@pytest.fixture
def ring2n_problem():
    return ring2_n()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_problems(count, n_states=5, n_actions=3, gamma=0.9, seed=0):
    rng = np.random.default_rng(seed)
    return [random_mdp(n_states, n_actions, gamma, rng) for _ in range(count)]
