import sys
import numpy as np
import pytest

from qedsched.costs import linear_queue, power_queue
from qedsched.hjb import GridSpec, solve_hjb
from qedsched.params import LimitParams, diffusion_coeffs


def two_class_limits(**kw) -> LimitParams:
    d = dict(lam=[0.5, 0.5], mu=[1.0, 1.0], theta=[0.5, 2.0], lam_hat=[0.0, 0.0], mu_hat=[1.0, 1.0],
             c2u=[1.0, 1.0], gamma=1.0)
    d.update(kw)
    return LimitParams(**d)


def one_class_limits(**kw) -> LimitParams:
    d = dict(lam=[1.0], mu=[1.0], theta=[0.5], lam_hat=[0.0], mu_hat=[0.5], c2u=[1.0], gamma=1.0)
    d.update(kw)
    return LimitParams(**d)


@pytest.fixture(scope="session")
def limits2():
    return two_class_limits()


@pytest.fixture(scope="session")
def coeffs2(limits2):
    return diffusion_coeffs(limits2)


@pytest.fixture(scope="session")
def quad_cost():
    return power_queue([1.0, 1.0], 2)


@pytest.fixture(scope="session")
def grid2():
    return GridSpec(box_halfwidth=5.0, points_per_axis=81, simplex_resolution=20, tol_residual=1e-6)


@pytest.fixture(scope="session")
def solved2(limits2, coeffs2, quad_cost, grid2):
    return solve_hjb(grid2, quad_cost, coeffs2, limits2)


@pytest.fixture(scope="session")
def limits1():
    return one_class_limits()


@pytest.fixture(scope="session")
def coeffs1(limits1):
    return diffusion_coeffs(limits1)


@pytest.fixture(scope="session")
def lin_cost1():
    return linear_queue([1.0])


@pytest.fixture(scope="session")
def grid1():
    return GridSpec(box_halfwidth=6.0, points_per_axis=201, simplex_resolution=20, tol_residual=1e-6)


@pytest.fixture(scope="session")
def solved1(limits1, coeffs1, lin_cost1, grid1):
    return solve_hjb(grid1, lin_cost1, coeffs1, limits1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split()[0])):
            terminalreporter.write_line(line)
