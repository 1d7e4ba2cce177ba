"""Generalized Riemann problem solver in shock-fitted reference coordinates.

The quasilinear problem is solved by an outer Picard iteration on the
coefficient field ``z``: for frozen ``z`` the curves and characteristic
speeds are fixed and the semilinear broad problem is solved with the
Rankine-Hugoniot transfer operators ``G`` evaluated in the frozen frame.
At the fixed point ``z = ybar`` the frozen operators coincide with the exact
jump relations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import reference_geometry as rg
from . import riemann_fan as rf
from . import system_model as sm
from .broad_solution import (BalanceLawSource, BoundaryOperator,
                             SemilinearProblem, solve_broad)
from .errors import (BoundViolation, DegenerateTime, DenominatorTooSmall,
                     OuterDivergence, OutsidePhysicalDomain, SolverError,
                     ValidationError)


# ---------------------------------------------------------------------------
# dilation of the initial pieces
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DilatedPiece:
    """u(xbar + (xbar - anchor) x0 / ell') mapping the reference interval
    onto the physical one with the jump moved to 0.

    ``side = 'left'``:  ubar(xbar) = u(xbar + (xbar + ell) x0 / ell)
    ``side = 'right'``: ubar(xbar) = u(xbar - (xbar - ell) x0 / ell)
    """

    piece: object
    x0: float
    ell: float
    side: str

    def argument(self, xbar):
        xbar = np.asarray(xbar, dtype=float)
        if self.side == "left":
            return xbar + (xbar + self.ell) * self.x0 / self.ell
        return xbar - (xbar - self.ell) * self.x0 / self.ell

    @property
    def factor(self):
        return 1.0 + self.x0 / self.ell if self.side == "left" else 1.0 - self.x0 / self.ell

    def __call__(self, xbar):
        return self.piece(self.argument(xbar))

    def derivative(self, xbar):
        return self.factor * self.piece.derivative(self.argument(xbar))


def dilate_initial(control):
    """(ubar_l on [-ell, 0], ubar_r on [0, ell]) as callables with derivative."""
    return (DilatedPiece(control.u_l, float(control.x0), float(control.ell), "left"),
            DilatedPiece(control.u_r, float(control.x0), float(control.ell), "right"))


# ---------------------------------------------------------------------------
# Rankine-Hugoniot transfer operators
# ---------------------------------------------------------------------------
def transfer_coefficients(model, i, z_from, z_to):
    """Affine coefficients (p, q) of the jump transfer for field i.

    With frames evaluated at ``z_from``/``z_to`` the operator reads
    ``G = v + (l_i(z_to) - l_i(z_from)) . y_from
          - sum_{m != i} c_m l_m(z_to) . (y_to - y_from)``,
    ``c_m = l_i(zbar) . r_m(z_to) / l_i(zbar) . r_i(z_to)``, zbar the averaged
    Jacobian of the pair.  Returns ``p, q`` with ``G = v + p.y_from + q.y_to``.
    """
    z_from = np.asarray(z_from, dtype=float)
    z_to = np.asarray(z_to, dtype=float)
    e_from = sm.eigen_decompose(model, z_from)
    e_to = sm.eigen_decompose(model, z_to)
    _, e_avg = sm.averaged_jacobian(model, z_from, z_to)
    li = e_avg.left[..., i, :]
    coef = np.einsum("...c,...cm->...m", li, e_to.right)
    denom = coef[..., i]
    if np.any(np.abs(denom) < 0.5):
        raise DenominatorTooSmall(
            f"|l_i(avg) . r_i| = {float(np.min(np.abs(denom))):.3e} < 1/2 for field {i}")
    ratio = coef / denom[..., None]
    ratio[..., i] = 0.0
    beta = np.einsum("...m,...mc->...c", ratio, e_to.left)
    alpha = e_to.left[..., i, :] - e_from.left[..., i, :]
    return alpha + beta, -beta


def grp_boundary_G(model, i, k, t, transported, vL, vR):
    """Jump relation for field i across shock k (all zero based).

    For i > k information passes from the left state vL to the right one,
    for i < k from vR to vL.  ``t`` is accepted for interface symmetry (G has
    no explicit time dependence).
    """
    if i == k:
        raise ValueError("the shock field itself carries no transfer condition")
    y_from, y_to = (vL, vR) if i > k else (vR, vL)
    p, q = transfer_coefficients(model, i, y_from, y_to)
    return (np.asarray(transported, dtype=float)
            + np.einsum("...c,...c->...", p, np.asarray(y_from, dtype=float))
            + np.einsum("...c,...c->...", q, np.asarray(y_to, dtype=float)))


class FrozenJumpOperator(BoundaryOperator):
    """G with frames from the frozen field and live jump values."""

    def coefficients(self, problem, k, i, t, z_from, z_to):
        p, q = transfer_coefficients(problem.model, i, z_from, z_to)
        N = np.shape(t)[0]
        return np.ones(N), p, q, np.zeros(N)


# ---------------------------------------------------------------------------
# solution container
# ---------------------------------------------------------------------------
@dataclass
class SolverParams:
    inner_tol: float = 1e-10
    inner_max: int = 200
    outer_tol: float = 1e-8
    outer_max: int = 50
    newton_tol: float = 1e-10
    rh_factor: float = 5.0
    entropy_tol: float = 1e-8
    c_y: Optional[float] = None
    validate: bool = True
    collapse_loops: bool = False


@dataclass
class GrpSolution:
    model: object
    domain: object
    control: object
    params: SolverParams
    ybar: rg.PiecewiseField
    ybar_x: rg.PiecewiseField
    curves: rg.CurveFamily
    fan: rf.RiemannFan
    x0: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.domain.T

    def grid_h(self):
        return max(self.domain.dt, 1.0 / self.domain.P)

    def shock_positions(self, t):
        return self.curves.shock_positions(t)

    def determinacy_interval(self, t):
        lm = self.domain.lambda_max
        return -self.domain.ell + lm * t, self.domain.ell - lm * t


def initial_guess(domain, control, fan_states):
    """Initial data constant in time on the outer sectors, fan states inside."""
    ul, ur = dilate_initial(control)
    vals = np.empty((domain.n_sectors, domain.M + 1, domain.P + 1, fan_states.shape[-1]))
    for j in range(domain.n_sectors):
        if j == 0:
            vals[j] = ul(domain.xbar(0, 0.0, domain.sigmas))[None]
        elif j == domain.n:
            vals[j] = ur(domain.xbar(j, 0.0, domain.sigmas))[None]
        else:
            vals[j] = fan_states[j]
    return rg.PiecewiseField(domain, vals)


def make_problem(model, domain, z, control, boundary=None, source=None, t0_states=None):
    ul, ur = dilate_initial(control)
    curves = rg.build_curves(domain, model, z, control.x0)
    return SemilinearProblem(model, domain, curves, z, float(control.x0), ul, ur,
                             boundary if boundary is not None else FrozenJumpOperator(),
                             source if source is not None else BalanceLawSource(model),
                             t0_states)


def solve_grp(model, domain, control, params=None, nominal_fan=None):
    """Solve the GRP for ``control`` on the fixed reference ``domain``."""
    params = params or SolverParams()
    t_start = time.perf_counter()
    uL, uR = control.nominal_pair()
    if nominal_fan is None:
        nominal_fan = rf.solve_riemann(model, uL, uR, tol=params.newton_tol)
    if params.validate:
        adm = rf.validate_admissible_set(model, control, uL, uR)
        if not adm.passed:
            raise ValidationError("control not admissible: " + "; ".join(adm.messages))
    jl, jr = control.jump_pair()
    fan = rf.solve_riemann(model, jl, jr, tol=params.newton_tol)
    z = initial_guess(domain, control, fan.states)
    if params.validate:
        rep = rg.check_welldefinedness(domain, model, z, control.x0, control.eps,
                                       nominal_fan.states)
        rg.require(rep)
    c_y = params.c_y
    if c_y is None:
        lo, hi = model.box_bounds()
        gmax = 0.0
        if model.has_source:
            pts = np.array(np.meshgrid(*[np.linspace(a, b, 5) for a, b in zip(lo, hi)]))
            pts = pts.reshape(model.n, -1).T
            xs = np.linspace(-domain.ell, domain.ell, 5)
            for x in xs:
                for t in np.linspace(0, domain.T, 3):
                    gmax = max(gmax, float(np.max(np.abs(model.g(t, x, pts)))))
        c_y = 2 * (float(np.max(np.abs(nominal_fan.states))) + domain.T * gmax)
    outer_res, inner_iters = [], []
    inner_max = 1 if params.collapse_loops else params.inner_max
    converged = False
    problem = None
    for k in range(1, params.outer_max + 1):
        problem = make_problem(model, domain, z, control, t0_states=fan.states)
        try:
            res = solve_broad(problem, initial_guess=z, tol=params.inner_tol,
                              max_iter=inner_max)
            new = res.solution
            inner_iters.append(res.iterations)
        except SolverError as exc:
            if not params.collapse_loops:
                raise type(exc)(f"outer iteration {k}: {exc} (T may be too large; "
                                "try halving it)") from exc
            raise
        except Exception as exc:  # NoContraction in collapsed mode handled above
            raise
        r = new.distance(z)
        outer_res.append(r)
        z = new
        if not np.all(np.isfinite(z.values)):
            raise OuterDivergence(f"non-finite iterate in outer iteration {k}")
        if r <= params.outer_tol:
            converged = True
            break
        if k >= 4 and r > 10 * min(outer_res):
            raise OuterDivergence(f"outer residual grew to {r:.3e} (iteration {k})")
    if not converged:
        raise OuterDivergence(f"no outer convergence in {params.outer_max} iterations "
                              f"(residual {outer_res[-1]:.3e}); consider a smaller T")
    ybar = z
    if ybar.pc0_norm() > c_y:
        raise BoundViolation(f"||ybar||_PC0 = {ybar.pc0_norm():.4g} exceeds c_y = {c_y:.4g}")
    curves = rg.build_curves(domain, model, ybar, control.x0)
    if params.validate:
        # the geometry bounds are enforced on the converged field only; Picard
        # iterates far from the fixed point may violate them transiently
        rg.require(rg.check_welldefinedness(domain, model, ybar, control.x0, control.eps,
                                            nominal_fan.states, curves))
    sol = GrpSolution(model, domain, control, params, ybar, rg.xbar_derivative(ybar),
                      curves, fan, float(control.x0))
    sol.diagnostics = {
        "outer_residuals": outer_res,
        "inner_iterations": inner_iters,
        "pc0_norm": ybar.pc0_norm(),
        "c_y": c_y,
        "runtime_s": time.perf_counter() - t_start,
    }
    report = entropy_and_rh_report(sol)
    sol.diagnostics["rh"] = report["rh_max"]
    sol.diagnostics["entropy"] = report["margin_min"]
    sol.diagnostics["rh_tol"] = report["rh_tol"]
    sol.diagnostics["passed"] = report["passed"]
    sol.diagnostics["nondegeneracy"] = all(c.passed for c in rg.nondegeneracy_checks(domain, curves))
    return sol


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------
def shock_margins(model, k, y_minus, y_plus, speed):
    """Lax margins for shock k: all must be >= 0 for an admissible shock.

    Returns an array (..., 2n) containing lambda_k(y-) - s, s - lambda_k(y+)
    and, for the other fields, the crossing margins on both sides.
    """
    lm = sm.eigen_decompose(model, y_minus).lambdas
    lp = sm.eigen_decompose(model, y_plus).lambdas
    speed = np.asarray(speed, dtype=float)
    out = [lm[..., k] - speed, speed - lp[..., k]]
    for i in range(model.n):
        if i < k:
            out += [speed - lm[..., i], speed - lp[..., i]]
        elif i > k:
            out += [lm[..., i] - speed, lp[..., i] - speed]
    return np.stack(out, axis=-1)


def rh_residual(model, y_minus, y_plus, speed):
    speed = np.asarray(speed, dtype=float)[..., None]
    return np.max(np.abs(speed * (y_plus - y_minus)
                         - (model.f(y_plus) - model.f(y_minus))), axis=-1)


def entropy_and_rh_report(solution):
    """RH residuals and Lax margins at every shock sample (time level)."""
    dom = solution.domain
    model = solution.model
    _, _, traces = rg.trace_states(solution.ybar)
    rh_tol = solution.params.rh_factor * solution.grid_h()
    shocks = []
    for k, (ym, yp) in enumerate(traces):
        speed = solution.curves.shocks[k].rates
        rh = rh_residual(model, ym, yp, speed)
        margins = shock_margins(model, k, ym, yp, speed)
        shocks.append({"shock": k, "rh": rh, "margins": margins,
                       "rh_max": float(np.max(rh)), "margin_min": float(np.min(margins))})
    rh_max = max(s["rh_max"] for s in shocks)
    margin_min = min(s["margin_min"] for s in shocks)
    passed = rh_max <= rh_tol and margin_min >= -solution.params.entropy_tol
    return {"shocks": shocks, "rh_max": rh_max, "margin_min": margin_min,
            "rh_tol": rh_tol, "passed": passed}


def locate_sector(solution, t, x):
    """Sector index of physical points x at time t (ties go to the right)."""
    x = np.asarray(x, dtype=float)
    curves = solution.curves
    lo = curves.left.value(t)
    hi = curves.right.value(t)
    if np.any(x < lo - 1e-13) or np.any(x > hi + 1e-13):
        raise OutsidePhysicalDomain(f"x outside [{float(lo):.6g}, {float(hi):.6g}] at t={t}")
    pos = curves.shock_positions(t)
    return np.searchsorted(pos, x, side="right")


def sample_physical(solution, t, x):
    """y(t, x) in physical coordinates (right limit on a shock)."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    sec = locate_sector(solution, t, x)
    out = np.empty(x.shape + (solution.domain.n,))
    for j in np.unique(sec):
        idx = sec == j
        sig = rg.sigma_from_physical(solution.domain, solution.curves, j, t, x[idx])
        sig = np.clip(sig, 0.0, 1.0)
        out[idx] = solution.ybar.evaluate(j, np.full(sig.shape, float(t)), sig)
    return out[0] if scalar else out


def sample_physical_limits(solution, t):
    """(y(x_k-), y(x_k+)) at every shock position x_k(t)."""
    dom = solution.domain
    out = []
    for k in range(dom.n):
        ym = solution.ybar.evaluate(k, np.array([t]), np.array([1.0]))[0]
        yp = solution.ybar.evaluate(k + 1, np.array([t]), np.array([0.0]))[0]
        out.append((ym, yp))
    return out


def principal_part_errors(solution, rays, t=None):
    """|y(t, x0 + c t) - fan state of the ray c| for the given ray speeds."""
    t = solution.domain.dt if t is None else t
    out = []
    speeds = solution.fan.speeds
    for c in rays:
        x = solution.x0 + c * t
        y = sample_physical(solution, t, x)
        j = int(np.searchsorted(speeds, c, side="right"))
        out.append(float(np.max(np.abs(y - solution.fan.states[j]))))
    return np.array(out)


def derivative_boundary_residual(solution, fd_step=1e-6):
    """Residual of the differentiated interior boundary conditions.

    For each shock k and transmitted field i the derivative trace
    ``l_i(y_to) . ybar_x`` of the receiving sector is compared with the
    value predicted by differentiating the jump relation along the shock.
    Returns a list of dicts (shock, field, max residual).
    """
    dom = solution.domain
    model = solution.model
    n = dom.n
    yb = solution.ybar
    yx = solution.ybar_x
    times = dom.times
    out = []
    for k in range(n):
        s = dom.speeds[k]
        yL = yb.column(k, 1)
        yR = yb.column(k + 1, 0)
        wL = yx.column(k, 1)
        wR = yx.column(k + 1, 0)
        x_sh = solution.curves.shocks[k].positions()
        dL = rg.transform_derivatives_sigma(dom, solution.curves, k, times, np.ones_like(times))
        dR = rg.transform_derivatives_sigma(dom, solution.curves, k + 1, times, np.zeros_like(times))
        ALbar = (model.jacobian(yL) - dL.x_t[:, None, None] * np.eye(n)) / dL.x_xbar[:, None, None]
        ARbar = (model.jacobian(yR) - dR.x_t[:, None, None] * np.eye(n)) / dR.x_xbar[:, None, None]
        gL = model.g(times, x_sh, yL)
        gR = model.g(times, x_sh, yR)
        # total derivatives of the traces along the shock line
        dyL = np.gradient(yL, times, axis=0) if dom.M >= 2 else np.zeros_like(yL)
        dyR = np.gradient(yR, times, axis=0) if dom.M >= 2 else np.zeros_like(yR)
        eL = sm.eigen_decompose(model, yL)
        eR = sm.eigen_decompose(model, yR)
        for i in range(n):
            if i == k:
                continue
            if i > k:
                y_f, y_t, w_f, w_t, A_f, A_t, g_f, g_t, dy_f, dy_t, e_f, e_t = (
                    yL, yR, wL, wR, ALbar, ARbar, gL, gR, dyL, dyR, eL, eR)
            else:
                y_f, y_t, w_f, w_t, A_f, A_t, g_f, g_t, dy_f, dy_t, e_f, e_t = (
                    yR, yL, wR, wL, ARbar, ALbar, gR, gL, dyR, dyL, eR, eL)
            v = np.einsum("mc,mc->m", e_f.left[:, i, :], y_f)

            def G(vv, a, b):
                return grp_boundary_G(model, i, k, None, vv, *((a, b) if i > k else (b, a)))

            # partial derivatives of G by central differences
            d2 = 1.0
            d3 = np.empty_like(y_f)
            d4 = np.empty_like(y_t)
            for c in range(n):
                e = np.zeros(n)
                e[c] = fd_step
                d3[:, c] = (G(v, y_f + e, y_t) - G(v, y_f - e, y_t)) / (2 * fd_step)
                d4[:, c] = (G(v, y_f, y_t + e) - G(v, y_f, y_t - e)) / (2 * fd_step)
            lam_f = np.einsum("mc,mcd,md->m", e_f.left[:, i, :], A_f, e_f.right[:, :, i])
            lam_t = np.einsum("mc,mcd,md->m", e_t.left[:, i, :], A_t, e_t.right[:, :, i])
            gradl_f = sm.left_vector_gradient(model, y_f)[:, i]
            gradl_t = sm.left_vector_gradient(model, y_t)[:, i]
            dl_f = np.einsum("mck,mk->mc", gradl_f, dy_f)
            dl_t = np.einsum("mck,mk->mc", gradl_t, dy_t)
            v_x = np.einsum("mc,mc->m", e_f.left[:, i, :], w_f)
            rhs = (d2 * (np.einsum("mc,mc->m", dl_f, y_f)
                         + np.einsum("mc,mc->m", e_f.left[:, i, :], g_f) + (s - lam_f) * v_x)
                   + np.einsum("mc,mc->m", d3, g_f + np.einsum("mcd,md->mc", s * np.eye(n) - A_f, w_f))
                   + np.einsum("mc,mc->m", d4, g_t + np.einsum("mcd,md->mc", s * np.eye(n) - A_t, w_t))
                   - np.einsum("mc,mc->m", dl_t, y_t)
                   - np.einsum("mc,mc->m", e_t.left[:, i, :], g_t))
            denom = s - lam_t
            K = rhs / denom
            actual = np.einsum("mc,mc->m", e_t.left[:, i, :], w_t)
            resid = np.abs(K - actual)
            out.append({"shock": k, "field": i, "max_residual": float(np.max(resid[1:]))
                        if resid.size > 1 else float(resid[0])})
    return out
