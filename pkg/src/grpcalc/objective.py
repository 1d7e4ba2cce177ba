"""Tracking functional J(u) = int_a^b Phi(y(T, x), y_d(x)) dx and its derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import grp_solver as gs
from . import riemann_fan as rf
from . import sensitivity as se
from .errors import (NonConvergentQuotient, ShockOnBoundary,
                     TargetDiscontinuousAtShock)


@dataclass(frozen=True)
class PiecewiseTarget:
    """Piecewise polynomial y_d: ``pieces[m]`` on [breakpoints[m-1], breakpoints[m]]."""

    breakpoints: tuple
    pieces: tuple

    def __post_init__(self):
        if len(self.pieces) != len(self.breakpoints) + 1:
            raise ValueError("need one more piece than breakpoints")
        if list(self.breakpoints) != sorted(self.breakpoints):
            raise ValueError("breakpoints must be increasing")

    @classmethod
    def constant(cls, value):
        return cls((), (rf.PolynomialPiece.constant(np.asarray(value, dtype=float)),))

    @classmethod
    def linear_interpolant(cls, nodes, values):
        """Continuous piecewise-linear target through (nodes[m], values[m])."""
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        pieces = []
        for m in range(nodes.size - 1):
            slope = (values[m + 1] - values[m]) / (nodes[m + 1] - nodes[m])
            c0 = values[m] - slope * nodes[m]
            pieces.append(rf.PolynomialPiece(np.stack([c0, slope], axis=-1)))
        pieces = [pieces[0]] + pieces + [pieces[-1]]
        return cls(tuple(float(x) for x in nodes), tuple(pieces))

    def _index(self, x, side="right"):
        return np.searchsorted(np.asarray(self.breakpoints), x, side=side)

    def __call__(self, x, side="right"):
        x = np.asarray(x, dtype=float)
        idx = self._index(x, side)
        out = np.empty(x.shape + (self.pieces[0].n,))
        for m in np.unique(idx):
            sel = idx == m
            out[sel] = self.pieces[m](x[sel])
        return out

    def limit(self, x, side, tol=1e-10):
        """One-sided limit y_d(x-) or y_d(x+); breakpoints within tol count as hit."""
        bps = np.asarray(self.breakpoints)
        if side == "left":
            m = int(np.searchsorted(bps, x - tol, side="left"))
        else:
            m = int(np.searchsorted(bps, x + tol, side="right"))
        return self.pieces[m](np.array([x]))[0]

    def jumps(self):
        """Breakpoints where the target is discontinuous."""
        out = []
        for m, xb in enumerate(self.breakpoints):
            if np.max(np.abs(self.pieces[m](xb) - self.pieces[m + 1](xb))) > 1e-12:
                out.append(xb)
        return np.array(out)


@dataclass(frozen=True)
class TrackingObjective:
    a: float
    b: float
    phi: Callable          # (y, y_d) -> (...)
    phi_y: Callable        # (y, y_d) -> (..., n)
    target: PiecewiseTarget


def squared_tracking(a, b, target):
    """Phi(y, y_d) = |y - y_d|^2."""
    return TrackingObjective(float(a), float(b),
                             lambda y, yd: np.sum((y - yd) ** 2, axis=-1),
                             lambda y, yd: 2.0 * (y - yd), target)


def _spacing(solution, t):
    dom = solution.domain
    return max(float(hi.value(t) - lo.value(t)) / dom.P
               for lo, hi in (solution.curves.sector_curves(j) for j in range(dom.n_sectors)))


def _check_interval(objective, solution):
    T = solution.T
    lo, hi = solution.determinacy_interval(T)
    if objective.a < lo - 1e-12 or objective.b > hi + 1e-12 or objective.a >= objective.b:
        raise ValueError(f"[a, b] must lie inside the determinacy interval [{lo:.6g}, {hi:.6g}]")
    h = _spacing(solution, T)
    for xk in solution.curves.shock_positions(T):
        if min(abs(xk - objective.a), abs(xk - objective.b)) <= h:
            raise ShockOnBoundary(f"shock at {xk:.6g} lies within h of an interval end")


def evaluate(objective, solution, split=True, panels=64):
    """Composite Gauss quadrature of Phi(y(T, x), y_d(x)) over [a, b].

    With ``split`` the panels are split at the shocks, the target breakpoints
    and the grid lines; otherwise ``panels`` uniform panels are used.
    """
    _check_interval(objective, solution)
    T = solution.T

    def integrand(x):
        return objective.phi(gs.sample_physical(solution, T, x), objective.target(x))

    if split:
        bps = np.concatenate([se.solution_breakpoints(solution, T),
                              np.asarray(objective.target.breakpoints, dtype=float)])
        return float(se.piecewise_integral(integrand, objective.a, objective.b, bps))
    return float(se.piecewise_integral(integrand, objective.a, objective.b, (),
                                       subdivide=panels))


def _smooth_part(objective, solution, bundle):
    T = solution.T

    def integrand(x):
        y = gs.sample_physical(solution, T, x)
        dy = se.physical_sensitivity(solution, bundle, T, x, guard=False)
        return np.sum(objective.phi_y(y, objective.target(x)) * dy, axis=-1)

    bps = np.concatenate([se.solution_breakpoints(solution, T),
                          np.asarray(objective.target.breakpoints, dtype=float)])
    return float(se.piecewise_integral(integrand, objective.a, objective.b, bps))


def _jump_part(objective, solution, bundle, one_sided):
    T = solution.T
    total = 0.0
    dxi = bundle.dxi_at(T)
    lims = gs.sample_physical_limits(solution, T)
    for k, xk in enumerate(solution.curves.shock_positions(T)):
        if not objective.a < xk < objective.b:
            continue
        side = "right" if (not one_sided or dxi[k] >= 0) else "left"
        yd = objective.target.limit(xk, side)
        ym, yp = lims[k]
        total += dxi[k] * float(objective.phi(ym, yd) - objective.phi(yp, yd))
    return total


def _require_continuous(objective, solution):
    T = solution.T
    h = _spacing(solution, T)
    jumps = objective.target.jumps()
    for xk in solution.curves.shock_positions(T):
        if jumps.size and np.min(np.abs(jumps - xk)) <= h and objective.a < xk < objective.b:
            raise TargetDiscontinuousAtShock(
                f"target jumps within h of the shock at {xk:.6g}; use directional_derivative")


def gradient(objective, solution, variation, solver=None, bundle=None):
    """dJ . du from the shift structure (target continuous at the shocks)."""
    _check_interval(objective, solution)
    _require_continuous(objective, solution)
    if bundle is None:
        bundle = se.solve_sensitivity(solution, variation, solver=solver)
    return _smooth_part(objective, solution, bundle) + _jump_part(objective, solution, bundle,
                                                                   one_sided=False)


def directional_derivative(objective, solution, variation, method="shift", eps=1e-3,
                           solver=None, bundle=None, rel_tol=0.05):
    """One-sided derivative of J in direction du.

    ``method='shift'`` evaluates the target at the limit on the side each
    shock moves toward; ``method='richardson'`` extrapolates one-sided
    difference quotients with steps eps, eps/2, eps/4.
    """
    _check_interval(objective, solution)
    if method == "shift":
        if bundle is None:
            bundle = se.solve_sensitivity(solution, variation, solver=solver)
        return _smooth_part(objective, solution, bundle) + _jump_part(
            objective, solution, bundle, one_sided=True)
    if method != "richardson":
        raise ValueError(f"unknown method {method!r}")
    J0 = evaluate(objective, solution)
    quot = []
    for e in (eps, eps / 2, eps / 4):
        pert = gs.solve_grp(solution.model, solution.domain,
                            se.perturb_control(solution.control, variation, e), solution.params)
        quot.append((evaluate(objective, pert) - J0) / e)
    r1 = 2 * quot[1] - quot[0]
    r2 = 2 * quot[2] - quot[1]
    if abs(r1 - r2) > rel_tol * max(abs(r1), abs(r2), 1e-12):
        raise NonConvergentQuotient(f"Richardson estimates {r1:.6g} and {r2:.6g} disagree")
    return r2
