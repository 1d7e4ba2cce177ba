import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grpcalc import objective as ob
from grpcalc import riemann_fan as rf
from grpcalc.errors import ShockOnBoundary, TargetDiscontinuousAtShock

from conftest import T, variations

P = rf.PolynomialPiece
ZERO = ob.PiecewiseTarget.constant([0.0, 0.0])


def step_target(at):
    """(0, 0) left of ``at`` and (0.3, 0) right of it."""
    return ob.PiecewiseTarget((at,), (P.constant(np.zeros(2)), P.constant(np.array([0.3, 0.0]))))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.floats(-0.5, 0.5))
def test_linear_interpolant_is_continuous_and_interpolates(vals, x):
    nodes = [-0.5, -0.1, 0.2, 0.5]
    values = [[v, -v] for v in vals]
    tg = ob.PiecewiseTarget.linear_interpolant(nodes, values)
    np.testing.assert_allclose(tg(np.array(nodes)), values, atol=1e-12)
    assert tg.jumps().size == 0
    np.testing.assert_allclose(tg(np.array([x]), side="left"), tg(np.array([x])), atol=1e-12)


def test_jumps_detected():
    assert step_target(0.1).jumps().tolist() == [0.1]


def test_evaluate_piecewise_constant_oracle(baseline_coarse):
    sol = baseline_coarse.solution
    J = ob.evaluate(ob.squared_tracking(-0.5, 0.5, ZERO), sol)
    assert J == pytest.approx(0.05, abs=1e-12)
    J_uniform = ob.evaluate(ob.squared_tracking(-0.5, 0.5, ZERO), sol, split=False, panels=64)
    assert J_uniform == pytest.approx(0.05, abs=1e-3)


def test_shock_on_boundary(baseline_coarse):
    with pytest.raises(ShockOnBoundary):
        ob.evaluate(ob.squared_tracking(-T, 0.5, ZERO), baseline_coarse.solution)


def test_interval_outside_determinacy_domain(baseline_coarse):
    with pytest.raises(ValueError):
        ob.evaluate(ob.squared_tracking(-0.95, 0.5, ZERO), baseline_coarse.solution)


def test_jump_part_oracle(baseline_coarse):
    """Constant states: dJ = dxi (Phi(y-) - Phi(y+)) for a pure shift."""
    sol = baseline_coarse.solution
    obj = ob.squared_tracking(-0.5, 0.5, ZERO)
    g = ob.gradient(obj, sol, variations()["shift_x0"])
    # both shocks shift by 1: |y0|^2 - |y1|^2 + |y1|^2 - |y2|^2 = 0
    assert g == pytest.approx(0.0, abs=1e-12)
    g = ob.gradient(obj, sol, variations()["bump_l"])
    # smooth part: 2 y0.e1 over [-0.5, -0.1]; jump part: T/2 (|y0|^2 - |y1|^2) = 0
    assert g == pytest.approx(2 * 0.2 * 0.4, abs=1e-12)


def test_discontinuous_target_needs_directional_derivative(baseline_coarse):
    sol = baseline_coarse.solution
    obj = ob.squared_tracking(-0.5, 0.5, step_target(-T))
    with pytest.raises(TargetDiscontinuousAtShock):
        ob.gradient(obj, sol, variations()["bump_l"])


def test_one_sided_derivative_matches_richardson(baseline_coarse):
    sol = baseline_coarse.solution
    obj = ob.squared_tracking(-0.5, 0.5, step_target(-T))
    v = variations()["bump_l"]
    shift = ob.directional_derivative(obj, sol, v, method="shift")
    rich = ob.directional_derivative(obj, sol, v, method="richardson", eps=1e-3)
    # smooth part 2 * 0.2 * 0.4; the shock moves right by T/2 into the region
    # where y_d = (0.3, 0): T/2 (|y- - y_d+|^2 - |y+ - y_d+|^2) = 0.05 (0.02 - 0.26)
    assert shift == pytest.approx(0.16 - 0.012, abs=1e-12)
    assert rich == pytest.approx(shift, rel=1e-3)
    # moving left the shock sweeps over y_d = 0, where |y-|^2 = |y+|^2
    back = ob.directional_derivative(obj, sol, v.scaled(-1.0), method="shift")
    assert back == pytest.approx(-0.16, abs=1e-12)


def test_shift_method_equals_gradient_for_continuous_target(baseline_coarse):
    sol = baseline_coarse.solution
    tg = ob.PiecewiseTarget.linear_interpolant([-0.5, -0.2, 0.3, 0.5],
                                               [[0.1, 0.0], [0.0, 0.1], [-0.1, 0.05], [0.0, 0.0]])
    obj = ob.squared_tracking(-0.5, 0.5, tg)
    for v in variations().values():
        g = ob.gradient(obj, sol, v)
        assert ob.directional_derivative(obj, sol, v) == pytest.approx(g, abs=1e-6)
        # Frechet: the opposite direction gives the opposite value
        assert ob.directional_derivative(obj, sol, v.scaled(-1.0)) == pytest.approx(-g, abs=1e-12)
