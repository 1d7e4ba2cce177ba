import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grpcalc import riemann_fan as rf
from grpcalc import system_model as sm
from grpcalc.errors import RarefactionRequired

from conftest import UL, UR, baseline_control, burgers_model


def test_burgers_pair_fan_oracle():
    fan = rf.solve_riemann(burgers_model(), UL, UR)
    np.testing.assert_allclose(fan.sigma, [-0.4, -0.2], atol=1e-10)
    np.testing.assert_allclose(fan.speeds, [-1.0, 1.0], atol=1e-10)
    np.testing.assert_allclose(fan.states[1], [-0.2, 0.1], atol=1e-10)
    assert fan.residual <= 1e-10
    assert fan.wave_kinds == (rf.SHOCK, rf.SHOCK)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.4, 0.4), min_size=4, max_size=4))
def test_linear_diag_strengths_are_projections(v):
    model = sm.builtin_model("linear_diag", {})
    uL, uR = np.array(v[:2]), np.array(v[2:])
    fan = rf.solve_riemann(model, uL, uR)
    eig = sm.eigen_decompose(model, uL)
    np.testing.assert_allclose(fan.sigma, eig.left @ (uR - uL), atol=1e-10)
    np.testing.assert_allclose(fan.states[-1], uR, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.02, 0.25), st.floats(0.02, 0.25), st.floats(-0.05, 0.05), st.floats(-0.05, 0.05))
def test_p_system_shock_fan_satisfies_rankine_hugoniot(d1, d2, v0, u0):
    """Two shocks: build uR from strengths, then recover them."""
    model = sm.builtin_model("p_system", {"a": 1.0}, box_center=[1.0, 0.0], box_radius=0.45)
    uL = np.array([1.0 + v0, u0])
    uR = rf.composite_wave_map(model, np.array([-d1, -d2]), uL)[-1]
    fan = rf.solve_riemann(model, uL, uR)
    np.testing.assert_allclose(fan.sigma, [-d1, -d2], atol=1e-8)
    assert np.max(fan.rh_residuals) < 1e-10
    for j in range(2):
        speed, res = rf.jump_condition_residual(model, fan.states[j], fan.states[j + 1], j)
        assert speed == pytest.approx(fan.speeds[j])
        assert np.max(np.abs(res)) < 1e-10
        # Lax: lambda_j(y-) > s_j > lambda_j(y+)
        lm = sm.eigen_decompose(model, fan.states[j]).lambdas[j]
        lp = sm.eigen_decompose(model, fan.states[j + 1]).lambdas[j]
        assert lm > fan.speeds[j] > lp


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.3, -1e-3), st.integers(0, 1))
def test_hugoniot_point_on_locus(sigma, i):
    model = burgers_model()
    base = np.array([0.05, -0.02])
    orient = rf.field_orientation(model, i, base)
    psi, s = rf.hugoniot_point(model, i, sigma, base, orient)
    np.testing.assert_allclose(s * (psi - base), model.f(psi) - model.f(base), atol=1e-12)
    li = orient * sm.eigen_decompose(model, base).left[i]
    assert li @ (psi - base) == pytest.approx(sigma, abs=1e-12)


def test_integral_curve_tangent():
    model = sm.builtin_model("p_system", {"a": 1.0}, box_center=[1.0, 0.0], box_radius=0.3)
    base = np.array([1.0, 0.0])
    h = 1e-4
    step = rf.integral_curve(model, 1, h, base) - base
    r = sm.eigen_decompose(model, base).right[:, 1]
    np.testing.assert_allclose(step / h, r, atol=1e-4)


def test_rarefaction_rejected():
    with pytest.raises(RarefactionRequired):
        rf.solve_riemann(burgers_model(), UR, UL)


def test_wave_curve_zero_strength_is_identity():
    base = np.array([0.1, 0.0])
    np.testing.assert_array_equal(rf.wave_curve(burgers_model(), 0, 0.0, base), base)


def test_baseline_admissible_and_bad_bounds_reported():
    model = burgers_model()
    rep = rf.validate_admissible_set(model, baseline_control())
    assert rep.passed, rep.messages
    steep = baseline_control(rf.PolynomialPiece(np.array([[0.2, 0.5], [0.1, 0.0]])))
    rep = rf.validate_admissible_set(model, steep)
    assert not rep.passed
    assert any("control.u_l" in m for m in rep.messages)


def test_fan_dict_round_trip_keys():
    d = rf.solve_riemann(burgers_model(), UL, UR).to_dict()
    assert set(d) == {"sigma", "states", "speeds", "kinds", "residuals"}


def test_hugoniot_locus_of_decoupled_pair():
    model = burgers_model()
    np.testing.assert_allclose(rf.wave_curve(model, 0, -0.4, np.array([0.2, 0.1])), [-0.2, 0.1],
                               atol=1e-12)


def test_jump_condition_residual_examples():
    model = burgers_model()
    speed, res = rf.jump_condition_residual(model, [0.2, 0.1], [-0.2, 0.1], 0)
    assert speed == pytest.approx(-1.0)
    np.testing.assert_allclose(res, [0.0], atol=1e-15)
    _, res = rf.jump_condition_residual(model, [0.2, 0.1], [-0.2, 0.2], 0)
    np.testing.assert_allclose(res, [0.1], atol=1e-12)


def test_swapped_states_are_inadmissible():
    ctrl = rf.Control(rf.PolynomialPiece.constant(UR), rf.PolynomialPiece.constant(UL), 0.0,
                      0.1, 0.2, 0.05, 1.0)
    assert not rf.validate_admissible_set(burgers_model(), ctrl).passed
