"""Shared problem setups (solved once per session)."""

import numpy as np
import pytest

from grpcalc import grp_solver as gs
from grpcalc import reference_geometry as rg
from grpcalc import riemann_fan as rf
from grpcalc import sensitivity as se
from grpcalc import system_model as sm

P = rf.PolynomialPiece
UL = np.array([0.2, 0.1])
UR = np.array([-0.2, -0.1])
T, ELL, EPS = 0.1, 1.0, 0.05
M0, M1 = 0.1, 0.2
TIGHT = gs.SolverParams(inner_tol=1e-12, outer_tol=1e-11)


def burgers_model(uL=UL, uR=UR):
    c, r = sm.default_working_box(uL, uR, M0, M1, EPS, ELL)
    return sm.builtin_model("burgers_pair", {}, box_center=c, box_radius=r)


class Setup:
    """A model, control, nominal fan and domain bundled for one test problem."""

    def __init__(self, model, control, grid, params=TIGHT):
        self.model = model
        self.control = control
        self.fan = rf.solve_riemann(model, *control.nominal_pair())
        self.domain = rg.build_domain(model, self.fan, T, control.ell, grid, grid)
        self.params = params

    def solve(self, control=None):
        return gs.solve_grp(self.model, self.domain, control or self.control, self.params,
                            nominal_fan=self.fan)


def baseline_control(u_l=None, x0=0.0):
    u_l = P.constant(UL) if u_l is None else u_l
    return rf.Control(u_l, P.constant(UR), x0, M0, M1, EPS, ELL,
                      nominal=(tuple(UL), tuple(UR)))


def perturbed_control():
    """u_l + 0.05 (x + ell) e_1."""
    return baseline_control(P(np.array([[UL[0] + 0.05 * ELL, 0.05], [UL[1], 0.0]])))


def variations():
    z = P.constant(np.zeros(2))
    return {"bump_l": se.ControlVariation(P.constant(np.array([1.0, 0.0])), z, 0.0),
            "poly_r": se.ControlVariation(z, P(np.array([[0.0, 0.5, 0.3], [0.2, -0.4, 0.0]])), 0.0),
            "shift_x0": se.ControlVariation(z, z, 1.0)}


@pytest.fixture(scope="session")
def baseline():
    s = Setup(burgers_model(), baseline_control(), 64)
    s.solution = s.solve()
    return s


@pytest.fixture(scope="session")
def baseline_coarse():
    s = Setup(burgers_model(), baseline_control(), 32)
    s.solution = s.solve()
    return s


@pytest.fixture(scope="session")
def perturbed():
    s = Setup(burgers_model(), perturbed_control(), 64)
    s.solution = s.solve()
    return s


@pytest.fixture(scope="session")
def perturbed_coarse():
    s = Setup(burgers_model(), perturbed_control(), 32)
    s.solution = s.solve()
    s.solver = se.SensitivitySolver(s.solution)
    return s


@pytest.fixture(scope="session")
def linear_cubic_control():
    ul = P(np.array([[0.2, 0.05, -0.03, 0.02], [0.1, -0.04, 0.02, 0.03]]))
    ur = P(np.array([[-0.2, 0.03, 0.04, -0.02], [-0.1, 0.05, -0.02, 0.01]]))
    return rf.Control(ul, ur, 0.02, 0.2, 0.5, EPS, ELL)


def linear_transport_exact(control, t, x):
    """Closed-form solution of y1_t - y1_x = 0, y2_t + y2_x = 0."""
    def u0(xx, c):
        return np.where(xx < control.x0, control.u_l(xx)[..., c], control.u_r(xx)[..., c])
    return np.stack([u0(x + t, 0), u0(x - t, 1)], axis=-1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
