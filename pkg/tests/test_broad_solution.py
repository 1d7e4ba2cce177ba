import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grpcalc import broad_solution as bs
from grpcalc import reference_geometry as rg
from grpcalc import riemann_fan as rf
from grpcalc import system_model as sm
from grpcalc.errors import NoExit

P = rf.PolynomialPiece


@pytest.fixture(scope="module")
def setting():
    model = sm.builtin_model("linear_diag", {})
    fan = rf.solve_riemann(model, np.zeros(2), np.zeros(2))
    dom = rg.build_domain(model, fan, 0.1, 1.0, 8, 8)
    return model, dom, rg.identity_curves(dom)


def problem(setting, left, right, source=None, t0=None):
    model, dom, curves = setting
    z = rg.PiecewiseField.from_constants(dom, np.zeros((3, 2)))
    return bs.SemilinearProblem(model, dom, curves, z, 0.0, left, right, bs.PassThrough(),
                                source, t0_states=t0)


def test_constant_state_is_reproduced(setting):
    c = np.array([0.3, -0.2])
    r = bs.solve_broad(problem(setting, P.constant(c), P.constant(c), t0=np.tile(c, (3, 1))))
    assert np.abs(r.solution.values - c).max() < 1e-14


def test_source_integrated_along_characteristics(setting):
    dom = setting[1]
    zero = P.constant(np.zeros(2))
    src = bs.FunctionSource(lambda j, t, xb, v: np.stack([2 * t, np.ones_like(t)], -1))
    r = bs.solve_broad(problem(setting, zero, zero, src))
    T2 = np.broadcast_to(dom.times[:, None] ** 2, (9, 9))
    # outer sectors: exact trapezoid rule on a quadratic integrand along exact paths
    for j in (0, 2):
        np.testing.assert_allclose(r.solution.values[j, ..., 0], T2, atol=1e-12)
    # middle sector: exit values are interpolated linearly in time along the shocks
    assert np.abs(r.solution.values[1, ..., 0] - T2).max() <= dom.dt ** 2 / 4 + 1e-12
    np.testing.assert_allclose(r.solution.values[..., 1], np.broadcast_to(dom.times[:, None], (3, 9, 9)),
                               atol=1e-14)


def test_linear_source_gives_exponential(setting):
    """y' = -y along characteristics with y(0) = 1."""
    dom = setting[1]
    one = P.constant(np.ones(2))
    src = bs.FunctionSource(lambda j, t, xb, v: -v)
    r = bs.solve_broad(problem(setting, one, one, src, t0=np.ones((3, 2))), tol=1e-13)
    exact = np.exp(-dom.times)[None, :, None, None]
    err = np.abs(r.solution.values - exact).max()
    assert err < 2 * dom.dt ** 2


def test_outer_sector_transport_of_linear_data(setting):
    """Sector 0 values are the data transported along straight characteristics."""
    model, dom, curves = setting
    ul = P(np.array([[0.1, 0.2], [-0.1, 0.3]]))
    r = bs.solve_broad(problem(setting, ul, P.constant(np.zeros(2))))
    xb = dom.node_xbar(0)
    t = dom.times[:, None]
    np.testing.assert_allclose(r.solution.values[0, ..., 0], ul(xb + t)[..., 0], atol=1e-13)
    np.testing.assert_allclose(r.solution.values[0, ..., 1], ul(xb - t)[..., 1], atol=1e-13)


def test_exit_rules(setting):
    pb = problem(setting, P.constant(np.zeros(2)), P.constant(np.zeros(2)))
    assert pb.exit_kind(0, 0) == bs.EXIT_INITIAL and pb.exit_kind(2, 1) == bs.EXIT_INITIAL
    assert pb.exit_kind(1, 1) == bs.EXIT_LEFT
    assert pb.exit_kind(1, 0) == bs.EXIT_RIGHT
    path = bs.trace_characteristic(pb, 1, 0.1, -0.5, 0)
    assert path.exit_kind == "InitialLine"
    assert path.exit_xbar == pytest.approx(-0.6, abs=1e-12)
    mid = bs.trace_characteristic(pb, 1, 0.1, 0.05, 1)
    assert mid.exit_kind == "LeftShock"
    # x - t = -(t) meets the left shock x = -t at t = 0.025
    assert mid.exit_time == pytest.approx(0.025, abs=1e-12)
    with pytest.raises(NoExit):
        bs.trace_characteristic(pb, 0, 0.05, 0.5, 1)


@settings(max_examples=10, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_fixed_point_linear_in_data(a, b):
    model = sm.builtin_model("linear_diag", {})
    fan = rf.solve_riemann(model, np.zeros(2), np.zeros(2))
    s = (model, rg.build_domain(model, fan, 0.1, 1.0, 8, 8), None)
    s = (s[0], s[1], rg.identity_curves(s[1]))
    d1 = (P(np.array([[0.1, 0.2], [0.0, -0.1]])), P(np.array([[0.3, 0.0], [0.1, 0.1]])))
    d2 = (P(np.array([[-0.2, 0.0], [0.1, 0.05]])), P(np.array([[0.0, 0.4], [0.2, -0.3]])))
    y1 = bs.solve_broad(problem(s, *d1)).solution
    y2 = bs.solve_broad(problem(s, *d2)).solution
    comb = (rf.combine_pieces(a, d1[0], b, d2[0]), rf.combine_pieces(a, d1[1], b, d2[1]))
    y = bs.solve_broad(problem(s, *comb)).solution
    assert np.abs(y.values - (a * y1.values + b * y2.values)).max() < 1e-12


def test_a_priori_bound_holds(setting):
    dom = setting[1]
    zero = P.constant(np.zeros(2))
    src = bs.FunctionSource(lambda j, t, xb, v: np.stack([2 * t, np.ones_like(t)], -1))
    pb = problem(setting, zero, zero, src)
    r = bs.solve_broad(pb)
    lhs, rhs = bs.pc0_bound_check(pb, r.solution)
    assert lhs <= rhs


def test_with_data_reuses_paths(setting):
    c = np.array([0.3, -0.2])
    pb = problem(setting, P.constant(c), P.constant(c), t0=np.tile(c, (3, 1)))
    pb.paths()
    pb2 = bs.with_data(pb, P.constant(2 * c), P.constant(2 * c), t0_states=np.tile(2 * c, (3, 1)))
    r = bs.solve_broad(pb2)
    assert np.abs(r.solution.values - 2 * c).max() < 1e-14


def test_exit_time_on_constant_fan(baseline):
    """Field 1 in the middle sector has speed 1.1 and exits on x = -t."""
    from grpcalc import grp_solver as gs
    s = baseline
    pb = gs.make_problem(s.model, s.domain, s.solution.ybar, s.control)
    t, xb = 0.08, 0.02
    path = bs.trace_characteristic(pb, 1, t, xb, 1)
    assert path.exit_kind == "LeftShock"
    assert path.exit_time == pytest.approx((1.1 * t - xb) / 2.1, abs=1e-12)
