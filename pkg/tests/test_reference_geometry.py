import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grpcalc import reference_geometry as rg
from grpcalc.errors import DegenerateGeometry, DegenerateTime, OutOfSector


@pytest.fixture(scope="module")
def dom():
    return rg.ReferenceDomain(0.1, 1.0, np.array([-1.0, 1.0]), 1.2, 16, 16)


def curved(dom):
    """Non-trivial curves: accelerating shocks, x0 = 0.01."""
    t = dom.times
    return rg.curves_from_rates(dom, 0.01, 1.2 + 0.3 * t, -1.2 - 0.1 * t,
                                [-1.0 + 2 * t, 1.0 - t ** 2])


def test_identity_curves_map_reference_to_itself(dom):
    curves = rg.identity_curves(dom)
    for j in range(3):
        t = np.array([0.03, 0.07])
        xb = dom.xbar(j, t, np.array([0.2, 0.9]))
        np.testing.assert_allclose(rg.to_physical(dom, curves, j, t, xb), xb, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2), st.floats(1e-3, 0.1), st.floats(0.0, 1.0))
def test_round_trip(j, t, sigma):
    d = rg.ReferenceDomain(0.1, 1.0, np.array([-1.0, 1.0]), 1.2, 16, 16)
    curves = curved(d)
    xb = d.xbar(j, t, sigma)
    x = rg.to_physical(d, curves, j, t, xb)
    assert rg.to_reference(d, curves, j, t, x) == pytest.approx(xb, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2), st.floats(0.01, 0.09), st.floats(0.05, 0.95))
def test_transform_derivatives_match_fd(j, t, sigma):
    d = rg.ReferenceDomain(0.1, 1.0, np.array([-1.0, 1.0]), 1.2, 16, 16)
    curves = curved(d)
    xb = d.xbar(j, t, sigma)
    der = rg.transform_derivatives(d, curves, j, t, xb)
    h = 1e-6
    f = lambda tt, xx: rg.to_physical(d, curves, j, tt, xx)
    assert der.x_t == pytest.approx((f(t + h, xb) - f(t - h, xb)) / (2 * h), abs=1e-6)
    assert der.x_xbar == pytest.approx((f(t, xb + h) - f(t, xb - h)) / (2 * h), abs=1e-6)
    assert der.xbar_x * der.x_xbar == pytest.approx(1.0)


def test_middle_sector_collapses_at_zero(dom):
    with pytest.raises(DegenerateTime):
        rg.to_physical(dom, rg.identity_curves(dom), 1, 0.0, 0.0)


def test_point_outside_sector(dom):
    with pytest.raises(OutOfSector):
        rg.to_reference(dom, rg.identity_curves(dom), 1, 0.05, 0.5)


def test_speeds_must_increase():
    with pytest.raises(DegenerateGeometry):
        rg.ReferenceDomain(0.1, 1.0, np.array([1.0, -1.0]), 1.2, 8, 8)


def test_sampled_curve_is_exact_integral_of_linear_rate(dom):
    c = rg.SampledCurve(dom.times, 1.0 + 3.0 * dom.times, 0.2)
    t = np.array([0.0, 0.013, 0.05, 0.1])
    np.testing.assert_allclose(c.value(t), 0.2 + t + 1.5 * t ** 2, atol=1e-14)
    np.testing.assert_allclose(c.rate(t), 1.0 + 3.0 * t, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4),
       st.floats(0, 0.1), st.floats(0, 1))
def test_bilinear_exact_for_bilinear_fields(c, t, s):
    d = rg.ReferenceDomain(0.1, 1.0, np.array([-1.0, 1.0]), 1.2, 8, 8)
    T, S = np.meshgrid(d.times, d.sigmas, indexing="ij")
    g = lambda tt, ss: c[0] + c[1] * tt + c[2] * ss + c[3] * tt * ss
    grid = g(T, S)[..., None]
    assert rg.bilinear(grid, d, np.array([t]), np.array([s]))[0, 0] == pytest.approx(g(t, s), abs=1e-12)


def test_piecewise_field_norms(dom):
    f = rg.PiecewiseField.from_constants(dom, np.array([[1.0, -2.0], [0.0, 0.5], [0.0, 0.0]]))
    assert f.pc0_norm() == 2.0
    assert (f - f.scaled(0.5)).pc0_norm() == 1.0


def test_xbar_derivative_of_linear_profile(dom):
    f = rg.PiecewiseField.zeros(dom, 1)
    for j in range(3):
        f.values[j, :, :, 0] = 3.0 * dom.node_xbar(j)
    dx = rg.xbar_derivative(f)
    np.testing.assert_allclose(dx.values[0], 3.0, atol=1e-10)
    np.testing.assert_allclose(dx.values[2], 3.0, atol=1e-10)
    np.testing.assert_allclose(dx.values[1, 1:], 3.0, atol=1e-8)


def test_welldefinedness_on_baseline(baseline):
    s = baseline
    rep = rg.check_welldefinedness(s.domain, s.model, s.solution.ybar, 0.0, s.control.eps,
                                   curves=s.solution.curves)
    assert rep.passed, rep.failures()


def test_constant_fan_middle_geometry_is_identity(baseline):
    sol = baseline.solution
    for t in (0.01, 0.05, 0.1):
        d = rg.transform_derivatives_sigma(sol.domain, sol.curves, 1, t, np.linspace(0, 1, 5))
        np.testing.assert_allclose(d.x_xbar, 1.0, atol=1e-14)
        np.testing.assert_allclose(d.x_t, 0.0, atol=1e-13)
