"""First-order sensitivities of the GRP solution with respect to the control.

The linearized problem for ``dybar`` is again semilinear on the reference
domain (same characteristic speeds as the converged solution):

    dybar_t + Abar(ybar) dybar_xbar = g_y dybar - (dA . dybar) ybar_xbar / x_xbar
                                      + g_x dx + ybar_xbar / x_xbar dx_t
                                      + (A - x_t I) ybar_xbar / x_xbar^2 dx_xbar

where ``dx, dx_t, dx_xbar`` are the variations of the transformation caused
by the shock-curve variations

    dxi_k(t) = dx0 + int_0^t grad lambda_k(avg)(ybar^-, ybar^+) . (dybar^-, dybar^+)

(the outer curves follow the extreme characteristics and get no dx0 term).
The shock variations depend linearly on the traces of ``dybar``; they are
re-evaluated from the current iterate in every application of the
fixed-point operator, so the whole map ``du -> (dybar, dxi)`` is linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import grp_solver as gs
from . import reference_geometry as rg
from . import riemann_fan as rf
from . import system_model as sm
from .broad_solution import (BoundaryOperator, SemilinearProblem, SourceTerm,
                             solve_broad, with_data)
from .errors import MissingDerivativeField, TooCloseToShock

FD_STEP = 1e-6
GL_X, GL_W = np.polynomial.legendre.leggauss(5)


# ---------------------------------------------------------------------------
# variations
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ControlVariation:
    du_l: object
    du_r: object
    dx0: float = 0.0

    @classmethod
    def zero(cls, n):
        z = rf.PolynomialPiece.constant(np.zeros(n))
        return cls(z, z, 0.0)

    def combine(self, alpha, other, beta):
        return ControlVariation(rf.combine_pieces(alpha, self.du_l, beta, other.du_l),
                                rf.combine_pieces(alpha, self.du_r, beta, other.du_r),
                                alpha * self.dx0 + beta * other.dx0)

    def scaled(self, alpha):
        return self.combine(alpha, self, 0.0)

    def norm(self, ell, eps, n_samples=401):
        """max of the C1 norms of du_l on [-ell, eps], du_r on [-eps, ell] and |dx0|."""
        xl = np.linspace(-ell, eps, n_samples)
        xr = np.linspace(-eps, ell, n_samples)
        nl = max(np.max(np.abs(self.du_l(xl))), np.max(np.abs(self.du_l.derivative(xl))))
        nr = max(np.max(np.abs(self.du_r(xr))), np.max(np.abs(self.du_r.derivative(xr))))
        return float(max(nl, nr, abs(self.dx0)))


def perturb_control(control, variation, eps):
    """The control u + eps du (admissibility data unchanged)."""
    return rf.Control(rf.combine_pieces(1.0, control.u_l, eps, variation.du_l),
                      rf.combine_pieces(1.0, control.u_r, eps, variation.du_r),
                      control.x0 + eps * variation.dx0, control.M0, control.M1,
                      control.eps, control.ell, control.nominal)


@dataclass(frozen=True)
class DilatedVariation:
    """Initial data of the linearized problem on one side.

    left:  D_l(du_l)(xbar) + D_l(u_l')(xbar) (xbar + ell)/ell dx0
    right: D_r(du_r)(xbar) + D_r(u_r')(xbar) (ell - xbar)/ell dx0
    """

    piece: object
    dpiece: object
    x0: float
    ell: float
    dx0: float
    side: str

    def __call__(self, xbar):
        xbar = np.asarray(xbar, dtype=float)
        d = gs.DilatedPiece(self.dpiece, self.x0, self.ell, self.side)
        arg = d.argument(xbar)
        if self.side == "left":
            weight = (xbar + self.ell) / self.ell
        else:
            weight = (self.ell - xbar) / self.ell
        return self.dpiece(arg) + self.piece.derivative(arg) * (weight * self.dx0)[..., None]


def dilate_variation(control, variation):
    return (DilatedVariation(control.u_l, variation.du_l, control.x0, control.ell,
                             variation.dx0, "left"),
            DilatedVariation(control.u_r, variation.du_r, control.x0, control.ell,
                             variation.dx0, "right"))


# ---------------------------------------------------------------------------
# linearized interior boundary conditions
# ---------------------------------------------------------------------------
def jump_partials(model, i, k, y_from, y_to, step=FD_STEP):
    """Central-FD partials of G w.r.t. the source-side and receiving-side states."""
    y_from = np.asarray(y_from, dtype=float)
    y_to = np.asarray(y_to, dtype=float)
    n = model.n
    zero = np.zeros(y_from.shape[:-1])

    def G(a, b):
        vL, vR = (a, b) if i > k else (b, a)
        return gs.grp_boundary_G(model, i, k, None, zero, vL, vR)

    d_from = np.empty(y_from.shape)
    d_to = np.empty(y_to.shape)
    for c in range(n):
        e = np.zeros(n)
        e[c] = step
        d_from[..., c] = (G(y_from + e, y_to) - G(y_from - e, y_to)) / (2 * step)
        d_to[..., c] = (G(y_from, y_to + e) - G(y_from, y_to - e)) / (2 * step)
    return d_from, d_to


def linearized_jump_coefficients(model, i, k, y_from, y_to):
    """(p, q) of ``B = v + p . d_from + q . d_to`` linearizing the jump relation.

    The relation is ``l_i(y_to) . y_to = G(l_i(y_from) . y_from, y_from, y_to)``;
    with ``v = l_i(y_from) . d_from`` its derivative is
    ``l_i(y_to) . d_to = v + (grad l_i(y_from) d_from) . y_from + dG_from d_from
                           + dG_to d_to - (grad l_i(y_to) d_to) . y_to``.
    """
    d_from, d_to = jump_partials(model, i, k, y_from, y_to)
    gl_from = sm.left_vector_gradient(model, y_from)[..., i, :, :]
    gl_to = sm.left_vector_gradient(model, y_to)[..., i, :, :]
    p = d_from + np.einsum("...c,...ck->...k", y_from, gl_from)
    q = d_to - np.einsum("...c,...ck->...k", y_to, gl_to)
    return p, q


class LinearizedJumpOperator(BoundaryOperator):
    def coefficients(self, problem, k, i, t, z_from, z_to):
        p, q = linearized_jump_coefficients(problem.model, i, k, z_from, z_to)
        N = np.shape(t)[0]
        return np.ones(N), p, q, np.zeros(N)


def initial_fan_variation(model, fan_states, d_left, d_right):
    """Middle-state variations at t = 0 from the linearized jump relations.

    Unknowns are the variations of the n-1 middle fan states; shock k
    contributes one equation per transmitted field i != k.
    """
    n = model.n
    S = n + 1
    states = np.asarray(fan_states, dtype=float)
    eig = sm.eigen_decompose(model, states)
    nu = n * (n - 1)
    A = np.zeros((nu, nu))
    b = np.zeros(nu)
    known = {0: np.asarray(d_left, dtype=float), n: np.asarray(d_right, dtype=float)}

    def add(row, sector, coeff):
        if sector in known:
            b[row] -= coeff @ known[sector]
        else:
            A[row, (sector - 1) * n:sector * n] += coeff

    row = 0
    for k in range(n):
        for i in range(n):
            if i == k:
                continue
            src, dst = (k, k + 1) if i > k else (k + 1, k)
            p, q = linearized_jump_coefficients(model, i, k, states[src], states[dst])
            # l_i(y_to) d_to - q d_to - (l_i(y_from) + p) d_from = 0
            add(row, dst, eig.left[dst, i] - q)
            add(row, src, -(eig.left[src, i] + p))
            row += 1
    out = np.empty((S, n))
    out[0] = known[0]
    out[n] = known[n]
    if nu:
        out[1:n] = np.linalg.solve(A, b).reshape(n - 1, n)
    return out


# ---------------------------------------------------------------------------
# linearized source
# ---------------------------------------------------------------------------
def transformation_variation(domain, dcurves, j, t, sigma):
    """(dx, dx_t, dx_xbar) at (t, sigma) of sector j for curve variations."""
    l0, lr, r0, rr = domain.edge_coefficients(j)
    da, dw, dadot, dwdot, dratio, _ = rg._sector_parts(domain, dcurves, j, t)
    sigma = np.asarray(sigma, dtype=float)
    dx = da + sigma * dw
    dx_t = dadot + sigma * dwdot - dratio * (lr + sigma * (rr - lr))
    return dx, dx_t, dratio * np.ones_like(sigma)


@dataclass
class LinearizationData:
    """Coefficient fields of the linearized problem on the grid."""

    P1: np.ndarray       # (S, M+1, P+1, n, n)
    q_x: np.ndarray      # (S, M+1, P+1, n)
    q_t: np.ndarray
    q_w: np.ndarray
    x_xbar: np.ndarray   # (S, M+1, P+1)
    grad_shock: list     # per shock (M+1, 2n)
    grad_left: np.ndarray   # (M+1, n)
    grad_right: np.ndarray


def linearization_data(solution):
    dom = solution.domain
    model = solution.model
    n = dom.n
    S = dom.n_sectors
    shp = (S, dom.M + 1, dom.P + 1)
    P1 = np.zeros(shp + (n, n))
    q_x = np.zeros(shp + (n,))
    q_t = np.zeros(shp + (n,))
    q_w = np.zeros(shp + (n,))
    xx = np.zeros(shp)
    tt = dom.times[:, None]
    ss = dom.sigmas[None, :]
    for j in range(S):
        y = solution.ybar.values[j]
        yx = solution.ybar_x.values[j]
        d = rg.transform_derivatives_sigma(dom, solution.curves, j, tt, ss)
        x_t = np.broadcast_to(d.x_t, shp[1:])
        x_xb = np.broadcast_to(d.x_xbar, shp[1:])
        dA = sm.jacobian_gradient(model, y)
        N = np.einsum("mpabk,mpb->mpak", dA, yx)
        gx, gy = np.zeros(y.shape), np.zeros(y.shape + (n,))
        if model.has_source:
            x = rg.physical_from_sigma(dom, solution.curves, j, tt, ss)
            gx, gy = model.source_derivatives(np.broadcast_to(tt, shp[1:]),
                                              np.broadcast_to(x, shp[1:]), y)
        P1[j] = gy - N / x_xb[..., None, None]
        q_x[j] = gx
        q_t[j] = yx / x_xb[..., None]
        Ash = model.jacobian(y) - x_t[..., None, None] * np.eye(n)
        q_w[j] = np.einsum("mpab,mpb->mpa", Ash, yx) / (x_xb ** 2)[..., None]
        xx[j] = x_xb
    left, right, shocks = rg.trace_states(solution.ybar)
    grad_shock = [sm.averaged_eigenvalue_gradient(model, ym, yp, k)
                  for k, (ym, yp) in enumerate(shocks)]
    grad_left = sm.eigenvalue_gradient(model, left)[:, n - 1, :]
    grad_right = sm.eigenvalue_gradient(model, right)[:, 0, :]
    return LinearizationData(P1, q_x, q_t, q_w, xx, grad_shock, grad_left, grad_right)


def curve_variations(domain, lin, dybar, dx0):
    """Variations of the outer and shock curves driven by the traces of dybar."""
    left, right, shocks = rg.trace_states(dybar)
    times = domain.times
    dshock = []
    for k, (dm, dp) in enumerate(shocks):
        rate = np.einsum("mc,mc->m", lin.grad_shock[k], np.concatenate([dm, dp], axis=-1))
        dshock.append(rg.SampledCurve(times, rate, float(dx0)))
    return rg.CurveFamily(
        rg.SampledCurve(times, np.einsum("mc,mc->m", lin.grad_left, left), 0.0),
        rg.SampledCurve(times, np.einsum("mc,mc->m", lin.grad_right, right), 0.0),
        dshock)


class LinearizedSource(SourceTerm):
    """The source of the linearized problem (linear in the iterate)."""

    def __init__(self, lin, dx0):
        self.lin = lin
        self.dx0 = float(dx0)

    def prepare(self, problem, j, node_t, node_sigma, stencil=None):
        dom = problem.domain
        t = np.nan_to_num(node_t)
        s = np.nan_to_num(node_sigma)
        n = problem.n
        if stencil is None:
            stencil = rg.bilinear_stencil(dom, t, s)
        lin = self.lin
        grid = np.concatenate([lin.P1[j].reshape(dom.M + 1, dom.P + 1, n * n),
                               lin.q_x[j], lin.q_t[j], lin.q_w[j]], axis=-1)
        vals = rg.apply_stencil(grid, stencil)
        nn = n * n
        return {"t": t, "sigma": s,
                "P1": vals[..., :nn].reshape(t.shape + (n, n)),
                "q_x": vals[..., nn:nn + n], "q_t": vals[..., nn + n:nn + 2 * n],
                "q_w": vals[..., nn + 2 * n:]}

    def begin(self, problem, iterate):
        return curve_variations(problem.domain, self.lin, iterate, self.dx0)

    def values(self, problem, context, j, node_t, node_sigma, v, data):
        dx, dx_t, dx_w = transformation_variation(problem.domain, context, j,
                                                  data["t"], data["sigma"])
        return (np.einsum("...ab,...b->...a", data["P1"], v)
                + data["q_x"] * dx[..., None] + data["q_t"] * dx_t[..., None]
                + data["q_w"] * dx_w[..., None])


# ---------------------------------------------------------------------------
# bundle
# ---------------------------------------------------------------------------
@dataclass
class SensitivityBundle:
    variation: ControlVariation
    dybar: rg.PiecewiseField
    dcurves: rg.CurveFamily
    residuals: list = field(default_factory=list)

    @property
    def dxi(self):
        """Per shock: sampled dxi_k on the time grid."""
        return [c.positions() for c in self.dcurves.shocks]

    def dxi_at(self, t):
        return np.array([float(c.value(t)) for c in self.dcurves.shocks])

    def dirac_weights(self, solution, t):
        lims = gs.sample_physical_limits(solution, t)
        d = self.dxi_at(t)
        return [d[k] * (ym - yp) for k, (ym, yp) in enumerate(lims)]


class SensitivitySolver:
    """Linearization around a converged solution; solves many variations."""

    def __init__(self, solution, tol=1e-12, max_iter=200):
        if solution.ybar_x is None:
            raise MissingDerivativeField("solution has no xbar-derivative field")
        self.solution = solution
        self.tol = tol
        self.max_iter = max_iter
        self.lin = linearization_data(solution)
        zero = rf.PolynomialPiece.constant(np.zeros(solution.domain.n))
        self.template = SemilinearProblem(
            solution.model, solution.domain, solution.curves, solution.ybar,
            solution.x0, zero, zero, LinearizedJumpOperator(), None,
            np.zeros((solution.domain.n_sectors, solution.domain.n)))
        self.template.paths()
        self.fan_states = solution.ybar.values[:, 0, 0, :].copy()
        for j in range(1, solution.domain.n):
            self.fan_states[j] = solution.fan.states[j]
        self.fan_states[0] = solution.ybar.values[0, 0, -1]
        self.fan_states[-1] = solution.ybar.values[-1, 0, 0]

    def problem_for(self, variation):
        ctrl = self.solution.control
        dl, dr = dilate_variation(ctrl, variation)
        t0 = initial_fan_variation(self.solution.model, self.fan_states,
                                   dl(np.array(0.0)), dr(np.array(0.0)))
        return with_data(self.template, dl, dr, t0, LinearizedSource(self.lin, variation.dx0))

    def solve(self, variation):
        problem = self.problem_for(variation)
        res = solve_broad(problem, initial_guess=rg.PiecewiseField.from_constants(
            self.solution.domain, problem.t0_states), tol=self.tol, max_iter=self.max_iter)
        dcurves = curve_variations(self.solution.domain, self.lin, res.solution, variation.dx0)
        return SensitivityBundle(variation, res.solution, dcurves, res.residuals)


def solve_sensitivity(solution, variation, tol=1e-12, solver=None):
    solver = solver or SensitivitySolver(solution, tol=tol)
    return solver.solve(variation)


# ---------------------------------------------------------------------------
# physical sensitivities
# ---------------------------------------------------------------------------
def guard_width(solution, t):
    """Distance from a shock inside which pointwise sensitivities are not reported."""
    dom = solution.domain
    widths = [float(hi.value(t) - lo.value(t)) / dom.P
              for lo, hi in (solution.curves.sector_curves(j) for j in range(dom.n_sectors))
              if float(hi.value(t) - lo.value(t)) > 0]
    dx = max(widths) if widths else 0.0
    return max(2.0 * dx, dom.lambda_max * dom.dt)


def physical_sensitivity(solution, bundle, t, x, guard=True):
    """dy(t, x) = dybar + ybar_xbar dxbar with dxbar = -dx / x_xbar."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    dom = solution.domain
    if guard:
        pos = solution.curves.shock_positions(t)
        if pos.size and np.min(np.abs(x[:, None] - pos[None, :])) <= guard_width(solution, t):
            raise TooCloseToShock(f"a sample point is within the guard band of a shock at t={t}")
    sec = gs.locate_sector(solution, t, x)
    out = np.empty(x.shape + (dom.n,))
    for j in np.unique(sec):
        idx = sec == j
        sig = np.clip(rg.sigma_from_physical(dom, solution.curves, j, t, x[idx]), 0.0, 1.0)
        tt = np.full(sig.shape, float(t))
        dyb = bundle.dybar.evaluate(j, tt, sig)
        yx = solution.ybar_x.evaluate(j, tt, sig)
        d = rg.transform_derivatives_sigma(dom, solution.curves, j, float(t), sig)
        dx, _, _ = transformation_variation(dom, bundle.dcurves, j, float(t), sig)
        out[idx] = dyb - yx * (dx / d.x_xbar)[..., None]
    return out[0] if scalar else out


@dataclass
class ShiftDerivative:
    t: float
    x: np.ndarray
    dy: np.ndarray
    dxi: np.ndarray
    positions: np.ndarray
    jumps: list       # y(x_k-) - y(x_k+)

    def structured(self, solution, bundle, eps, x):
        """S^x(eps du)(x): eps dy plus the jump indicators of the shifted shocks."""
        x = np.asarray(x, dtype=float)
        out = eps * physical_sensitivity(solution, bundle, self.t, x, guard=False)
        for k, xk in enumerate(self.positions):
            shift = eps * self.dxi[k]
            lo, hi = min(xk, xk + shift), max(xk, xk + shift)
            inside = (x > lo) & (x < hi)
            out[inside] += np.sign(shift) * self.jumps[k]
        return out


def determinacy_interval(solution, t):
    return solution.determinacy_interval(t)


def shift_derivative(solution, bundle, t, n_points=201):
    """(dy on a grid of I_t with NaN inside shock guard bands, dxi_k(t))."""
    a, b = determinacy_interval(solution, t)
    x = np.linspace(a, b, n_points)
    pos = solution.curves.shock_positions(t)
    g = guard_width(solution, t)
    dy = np.full(x.shape + (solution.domain.n,), np.nan)
    ok = np.all(np.abs(x[:, None] - pos[None, :]) > g, axis=1) if pos.size else np.ones(x.shape, bool)
    if np.any(ok):
        dy[ok] = physical_sensitivity(solution, bundle, t, x[ok], guard=False)
    jumps = [ym - yp for ym, yp in gs.sample_physical_limits(solution, t)]
    return ShiftDerivative(float(t), x, dy, bundle.dxi_at(t), pos, jumps)


# ---------------------------------------------------------------------------
# quadrature on piecewise smooth profiles
# ---------------------------------------------------------------------------
def node_breakpoints(solution, t):
    """Physical positions of the sigma grid lines at time t (all sectors)."""
    dom = solution.domain
    pts = []
    for j in range(dom.n_sectors):
        lo, hi = solution.curves.sector_curves(j)
        a = float(lo.value(t))
        w = float(hi.value(t)) - a
        pts.append(a + dom.sigmas * w)
    return np.concatenate(pts)


def piecewise_integral(func, a, b, breakpoints=(), subdivide=1):
    """Composite 5-point Gauss-Legendre quadrature split at breakpoints.

    ``func`` maps an array of points to an array (..., m) or (...,).
    """
    pts = np.asarray(list(breakpoints), dtype=float)
    pts = pts[(pts > a) & (pts < b)]
    edges = np.unique(np.concatenate([[a, b], pts]))
    if subdivide > 1:
        edges = np.unique(np.concatenate(
            [np.linspace(l, r, subdivide + 1) for l, r in zip(edges[:-1], edges[1:])]))
    l, r = edges[:-1], edges[1:]
    keep = r - l > 1e-15
    l, r = l[keep], r[keep]
    mid = 0.5 * (l + r)
    half = 0.5 * (r - l)
    x = (mid[:, None] + half[:, None] * GL_X[None, :]).ravel()
    w = (half[:, None] * GL_W[None, :]).ravel()
    vals = np.asarray(func(x))
    return np.tensordot(w, vals, axes=(0, 0))


def solution_breakpoints(solution, t):
    return np.concatenate([solution.curves.shock_positions(t), node_breakpoints(solution, t)])


def shift_remainder_l1(solution, bundle, perturbed, eps, t):
    """|| S_t(u + eps du) - S_t(u) - S^x(eps du) ||_{L1(I_t)}."""
    sd = shift_derivative(solution, bundle, t, n_points=3)
    a, b = determinacy_interval(solution, t)
    a2, b2 = determinacy_interval(perturbed, t)
    a, b = max(a, a2), min(b, b2)
    bps = np.concatenate([solution_breakpoints(solution, t), solution_breakpoints(perturbed, t),
                          sd.positions + eps * sd.dxi])

    def integrand(x):
        r = (gs.sample_physical(perturbed, t, x) - gs.sample_physical(solution, t, x)
             - sd.structured(solution, bundle, eps, x))
        return np.sum(np.abs(r), axis=-1)

    return float(piecewise_integral(integrand, a, b, bps))


def l1_distance(sol_a, sol_b, t):
    a, b = determinacy_interval(sol_a, t)
    a2, b2 = determinacy_interval(sol_b, t)
    a, b = max(a, a2), min(b, b2)
    bps = np.concatenate([solution_breakpoints(sol_a, t), solution_breakpoints(sol_b, t)])

    def integrand(x):
        return np.sum(np.abs(gs.sample_physical(sol_a, t, x) - gs.sample_physical(sol_b, t, x)),
                      axis=-1)

    return float(piecewise_integral(integrand, a, b, bps))


# ---------------------------------------------------------------------------
# measure derivative
# ---------------------------------------------------------------------------
@dataclass
class MeasureDerivative:
    t: float
    interval: tuple
    atoms: list           # (location, weight vector)
    solution: object
    bundle: object

    def density(self, x):
        return physical_sensitivity(self.solution, self.bundle, self.t, x, guard=False)

    def pair(self, phi):
        """<phi, dmu> = int phi . dy dx + sum_k phi(x_k) . weight_k."""
        a, b = self.interval
        bps = solution_breakpoints(self.solution, self.t)

        def integrand(x):
            return np.sum(phi(x) * self.density(x), axis=-1)

        total = float(piecewise_integral(integrand, a, b, bps, subdivide=2))
        for xk, wk in self.atoms:
            if a < xk < b:
                total += float(np.dot(phi(np.array([xk]))[0], wk))
        return total


def measure_derivative(solution, bundle, t):
    pos = solution.curves.shock_positions(t)
    weights = bundle.dirac_weights(solution, t)
    return MeasureDerivative(float(t), determinacy_interval(solution, t),
                             [(float(p), w) for p, w in zip(pos, weights)], solution, bundle)


def weak_pairing(solution, phi, t, interval=None):
    """int phi . y(t, x) dx over the interval (default I_t)."""
    a, b = interval or determinacy_interval(solution, t)
    bps = solution_breakpoints(solution, t)
    return float(piecewise_integral(
        lambda x: np.sum(phi(x) * gs.sample_physical(solution, t, x), axis=-1),
        a, b, bps, subdivide=2))
