"""Shared fixtures. The 12 s scenario runs take several seconds each, so they
are computed once per session."""

import numpy as np
import pytest

from phsmoc import linear_example, nonlinear_example, solve_riccati
from phsmoc.clf import ExtendedClf, named_basis
from phsmoc.scenarios import builtin_scenario, run_experiment

LIN_A = np.array([[-1.0, -1.0], [1.0, -1.0]])
LIN_B = np.array([[1.0], [0.0]])
LIN_Q = np.diag([100.0, 1.0])
LIN_S = np.eye(1)


@pytest.fixture(scope="session")
def lin():
    return linear_example()


@pytest.fixture(scope="session")
def nonlin():
    return nonlinear_example()


@pytest.fixture(scope="session")
def quad_basis():
    return named_basis("quadratic-2d")


@pytest.fixture(scope="session")
def lin_clf(lin, quad_basis):
    return ExtendedClf(lin, quad_basis)


@pytest.fixture(scope="session")
def nonlin_clf(nonlin, quad_basis):
    return ExtendedClf(nonlin, quad_basis)


@pytest.fixture(scope="session")
def riccati():
    return solve_riccati(LIN_A, LIN_B, LIN_Q, LIN_S)


@pytest.fixture(scope="session")
def w_star(riccati):
    return riccati.w_star


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20241015)


def _run(name):
    exp = builtin_scenario(name).build()
    return exp, run_experiment(exp)


@pytest.fixture(scope="session")
def linear_run():
    return _run("linear-example")


@pytest.fixture(scope="session")
def nonlinear_run():
    return _run("nonlinear-example")


@pytest.fixture(scope="session")
def wrong_basis_run():
    return _run("nonlinear-wrong-basis")


# Acceptance criteria record one verdict line each; they are echoed at the end
# of the session so they appear without ``-s``.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
