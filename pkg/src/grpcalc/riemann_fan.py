"""Classical Riemann problem with shocks and contact discontinuities.

Field indices are zero based throughout the code: field ``i`` has eigenvalue
``lambdas[..., i]``.  The fan of a Riemann problem consists of the states
``states[0] = uL, ..., states[n] = uR`` separated by waves ``0..n-1``.

Wave curves are parameterized so that ``dPsi/dsigma = r_i`` at the base point,
where for genuinely nonlinear fields ``r_i`` is oriented such that
``grad(lambda_i) . r_i > 0``; then ``sigma < 0`` selects the admissible
(Lax) shock branch and ``sigma > 0`` the rarefaction branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import system_model as sm
from .errors import (CurveLeftBox, NewtonDivergence, RarefactionRequired,
                     ValidationError)

SHOCK = "Shock"
CONTACT = "Contact"

ADMISSIBLE_SIGMA = 1e-10


# ---------------------------------------------------------------------------
# initial pieces and controls
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PolynomialPiece:
    """Vector polynomial x -> (p_1(x), ..., p_n(x)), ascending coefficients."""

    coeffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "coeffs",
                           tuple(tuple(float(c) for c in comp) for comp in self.coeffs))

    @property
    def n(self):
        return len(self.coeffs)

    @classmethod
    def constant(cls, value):
        return cls(tuple((float(v),) for v in value))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.polynomial.polynomial.polyval(x, c) for c in self.coeffs],
                        axis=-1)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.polynomial.polynomial.polyval(
            x, np.polynomial.polynomial.polyder(c) if len(c) > 1 else [0.0])
            for c in self.coeffs], axis=-1)

    def combine(self, alpha, other, beta):
        """alpha * self + beta * other for two polynomial pieces."""
        out = []
        for a, b in zip(self.coeffs, other.coeffs):
            m = max(len(a), len(b))
            a = np.pad(np.asarray(a), (0, m - len(a)))
            b = np.pad(np.asarray(b), (0, m - len(b)))
            out.append(tuple(alpha * a + beta * b))
        return PolynomialPiece(tuple(out))


@dataclass(frozen=True)
class FunctionPiece:
    """Arbitrary C^1 piece given by vectorized value and derivative callables."""

    value: Callable
    deriv: Callable

    def __call__(self, x):
        return np.asarray(self.value(np.asarray(x, dtype=float)), dtype=float)

    def derivative(self, x):
        return np.asarray(self.deriv(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class SumPiece:
    """alpha * a + beta * b for arbitrary pieces."""

    a: object
    alpha: float
    b: object
    beta: float

    def __call__(self, x):
        return self.alpha * self.a(x) + self.beta * self.b(x)

    def derivative(self, x):
        return self.alpha * self.a.derivative(x) + self.beta * self.b.derivative(x)


def combine_pieces(alpha, a, beta, b):
    if isinstance(a, PolynomialPiece) and isinstance(b, PolynomialPiece):
        return a.combine(alpha, b, beta)
    return SumPiece(a, float(alpha), b, float(beta))


@dataclass(frozen=True)
class Control:
    """Initial data: u_l left of x0, u_r right of x0, with admissibility data.

    ``nominal`` is the nominal pair (u_L, u_R) the admissible set is centered
    on; by default it is (u_l(x0), u_r(x0)).
    """

    u_l: object
    u_r: object
    x0: float
    M0: float
    M1: float
    eps: float
    ell: float
    nominal: Optional[tuple] = None

    def nominal_pair(self):
        if self.nominal is not None:
            return (np.asarray(self.nominal[0], dtype=float),
                    np.asarray(self.nominal[1], dtype=float))
        return self.u_l(self.x0), self.u_r(self.x0)

    def jump_pair(self):
        """The actual jump (u_l(x0), u_r(x0))."""
        return self.u_l(self.x0), self.u_r(self.x0)

    def with_nominal(self):
        uL, uR = self.nominal_pair()
        return Control(self.u_l, self.u_r, self.x0, self.M0, self.M1, self.eps,
                       self.ell, (tuple(uL), tuple(uR)))

    def bound_violations(self, n_samples=401):
        """List of violated admissibility bounds (empty when admissible)."""
        uL, uR = self.nominal_pair()
        out = []
        if not abs(self.x0) < self.eps:
            out.append(("x0", f"|x0| = {abs(self.x0):.6g} must be < eps = {self.eps:.6g}"))
        xl = np.linspace(-self.ell, self.eps, n_samples)
        xr = np.linspace(-self.eps, self.ell, n_samples)
        dl = np.max(np.abs(self.u_l(xl) - uL))
        dr = np.max(np.abs(self.u_r(xr) - uR))
        if not dl < self.M0:
            out.append(("u_l", f"sup|u_l - u_L| = {dl:.6g} must be < M0 = {self.M0:.6g}"))
        if not dr < self.M0:
            out.append(("u_r", f"sup|u_r - u_R| = {dr:.6g} must be < M0 = {self.M0:.6g}"))
        sl = np.max(np.abs(self.u_l.derivative(xl)))
        sr = np.max(np.abs(self.u_r.derivative(xr)))
        if not sl < self.M1:
            out.append(("u_l", f"sup|u_l'| = {sl:.6g} must be < M1 = {self.M1:.6g}"))
        if not sr < self.M1:
            out.append(("u_r", f"sup|u_r'| = {sr:.6g} must be < M1 = {self.M1:.6g}"))
        return out


# ---------------------------------------------------------------------------
# wave curves
# ---------------------------------------------------------------------------
def field_orientation(model, i, base):
    """+1/-1 making grad(lambda_i) . r_i > 0 for nonlinear fields; +1 for LD."""
    if model.field_kinds[i] == sm.LD:
        return 1.0
    coef = sm.nonlinearity_coefficients(model, np.asarray(base, dtype=float))[i]
    return -1.0 if coef < 0 else 1.0


def _check_box(model, y):
    lo, hi = model.box_bounds()
    slack = model.box_radius
    if not np.all(np.isfinite(y)) or np.any(y < lo - slack) or np.any(y > hi + slack):
        raise CurveLeftBox(f"wave curve left the working box at {np.array2string(y)}")


def integral_curve(model, i, sigma, base, orientation=1.0, substeps=32):
    """RK4 integration of dPsi/dsigma = orientation * r_i(Psi)."""
    y = np.array(base, dtype=float)
    h = sigma / substeps

    def rhs(v):
        return orientation * sm.eigen_decompose(model, v).right[:, i]

    for _ in range(substeps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def hugoniot_point(model, i, sigma, base, orientation=1.0, max_iter=50, tol=1e-12):
    """State on the i-Hugoniot locus with l_i(base) . (Psi - base) = sigma.

    Newton on the scaled unknowns (d, s) with Psi = base + sigma d, started
    from the integral-curve predictor.  Returns (Psi, s).
    """
    base = np.asarray(base, dtype=float)
    eig = sm.eigen_decompose(model, base)
    li = orientation * eig.left[i]
    n = model.n
    pred = integral_curve(model, i, sigma, base, orientation, substeps=4)
    d = (pred - base) / sigma
    s = sm.averaged_eigenvalues(model, pred, base)[i]
    fb = model.f(base)
    for _ in range(max_iter):
        psi = base + sigma * d
        F = np.concatenate([s * d - (model.f(psi) - fb) / sigma, [li @ d - 1.0]])
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = s * np.eye(n) - model.jacobian(psi)
        J[:n, n] = d
        J[n, :n] = li
        step = np.linalg.solve(J, -F)
        d = d + step[:n]
        s = s + step[n]
        if np.max(np.abs(step)) < 1e-15 * (1.0 + np.max(np.abs(d))):
            break
    psi = base + sigma * d
    res = np.max(np.abs(s * (psi - base) - (model.f(psi) - fb)))
    if not np.isfinite(res) or res > tol:
        raise NewtonDivergence(
            f"Hugoniot Newton for field {i} at sigma={sigma:.3g}: residual {res:.3e}")
    return psi, s


def wave_curve(model, i, sigma_i, base):
    """Psi_i(sigma_i)(base): shock branch for sigma < 0 on nonlinear fields,
    integral curve otherwise (rarefaction for sigma > 0, contact for LD)."""
    base = np.asarray(base, dtype=float)
    if sigma_i == 0.0:
        return base.copy()
    orientation = field_orientation(model, i, base)
    if model.field_kinds[i] != sm.LD and sigma_i < 0.0:
        if abs(sigma_i) < 1e-12:
            out = base + sigma_i * orientation * sm.eigen_decompose(model, base).right[:, i]
        else:
            out = hugoniot_point(model, i, sigma_i, base, orientation)[0]
    else:
        out = integral_curve(model, i, sigma_i, base, orientation)
    _check_box(model, out)
    return out


def composite_wave_map(model, sigma, uL):
    """Lambda(sigma)(uL) together with all intermediate states."""
    states = [np.asarray(uL, dtype=float)]
    for i, s in enumerate(sigma):
        states.append(wave_curve(model, i, float(s), states[-1]))
    return np.array(states)


# ---------------------------------------------------------------------------
# Riemann solver
# ---------------------------------------------------------------------------
@dataclass
class RiemannFan:
    sigma: np.ndarray
    states: np.ndarray
    wave_kinds: tuple
    speeds: np.ndarray
    rh_residuals: np.ndarray
    residual: float

    def to_dict(self):
        return {
            "sigma": [float(v) for v in self.sigma],
            "states": [[float(v) for v in s] for s in self.states],
            "speeds": [float(v) for v in self.speeds],
            "kinds": list(self.wave_kinds),
            "residuals": {"newton": float(self.residual),
                          "rankine_hugoniot": [float(v) for v in self.rh_residuals]},
        }


def _solve_sigma(model, uL, uR, tol=1e-10, max_iter=50, fd_step=1e-7):
    uL = np.asarray(uL, dtype=float)
    uR = np.asarray(uR, dtype=float)
    n = model.n
    mid = 0.5 * (uL + uR)
    eig = sm.eigen_decompose(model, mid)
    orient = np.array([field_orientation(model, i, mid) for i in range(n)])
    sigma = orient * (eig.left @ (uR - uL))

    def F(sig):
        return composite_wave_map(model, sig, uL)[-1] - uR

    res = F(sigma)
    norm = np.max(np.abs(res))
    for _ in range(max_iter):
        if norm <= 1e-14 * (1.0 + np.max(np.abs(uR))):
            break
        J = np.empty((n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = fd_step
            J[:, k] = (F(sigma + e) - F(sigma - e)) / (2 * fd_step)
        delta = np.linalg.solve(J, -res)
        alpha = 1.0
        improved = False
        for _h in range(21):
            trial = sigma + alpha * delta
            try:
                r_trial = F(trial)
            except (NewtonDivergence, CurveLeftBox):
                alpha *= 0.5
                continue
            n_trial = np.max(np.abs(r_trial))
            if n_trial < norm:
                sigma, res, norm = trial, r_trial, n_trial
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    if not norm <= tol:
        raise NewtonDivergence(f"Riemann Newton residual {norm:.3e} > {tol:.1e}")
    return sigma, composite_wave_map(model, sigma, uL), norm


def solve_riemann(model, uL, uR, tol=1e-10, allow_rarefaction=False):
    """Entropy solution of the Riemann problem (uL, uR) made of shocks/contacts.

    Raises :class:`RarefactionRequired` if a nonlinear field needs sigma > 0.
    """
    sigma, states, norm = _solve_sigma(model, uL, uR, tol)
    kinds = []
    for i in range(model.n):
        if model.field_kinds[i] == sm.LD:
            kinds.append(CONTACT)
        else:
            if sigma[i] > ADMISSIBLE_SIGMA and not allow_rarefaction:
                raise RarefactionRequired(
                    f"field {i} requires a rarefaction (sigma = {sigma[i]:.3e})")
            kinds.append(SHOCK)
    speeds = np.array([sm.averaged_eigenvalues(model, states[i], states[i + 1])[i]
                       for i in range(model.n)])
    rh = np.array([np.max(np.abs(speeds[i] * (states[i + 1] - states[i])
                                 - (model.f(states[i + 1]) - model.f(states[i]))))
                   for i in range(model.n)])
    return RiemannFan(sigma, states, tuple(kinds), speeds, rh, float(norm))


def jump_condition_residual(model, y_minus, y_plus, j):
    """Speed lambda_j(y-, y+) and residuals l_i(y-, y+) . (y+ - y-), i != j."""
    y_minus = np.asarray(y_minus, dtype=float)
    y_plus = np.asarray(y_plus, dtype=float)
    _, eig = sm.averaged_jacobian(model, y_minus, y_plus)
    jump = y_plus - y_minus
    res = np.array([eig.left[i] @ jump for i in range(model.n) if i != j])
    return float(eig.lambdas[j]), res


@dataclass
class AdmissibilityReport:
    passed: bool
    max_sigma: np.ndarray
    nominal_sigma: np.ndarray
    messages: list = field(default_factory=list)


def validate_admissible_set(model, control, uL=None, uR=None, n_samples=11):
    """Check that sampled jump pairs need no rarefactions (and bound checks).

    Pairs (u_l(x), u_r(x)) for x in [-eps, eps] must have sigma_i <= 1e-10
    on every nonlinear field; the nominal pair must have sigma_i < -1e-6.
    """
    if uL is None or uR is None:
        uL, uR = control.nominal_pair()
    messages = []
    for key, msg in control.bound_violations():
        messages.append(f"control.{key}: {msg}")
    gnl = np.array([k != sm.LD for k in model.field_kinds])
    try:
        nominal_sigma = _solve_sigma(model, uL, uR)[0]
    except ValidationError as exc:
        return AdmissibilityReport(False, np.full(model.n, np.nan),
                                   np.full(model.n, np.nan), messages + [str(exc)])
    if np.any(nominal_sigma[gnl] >= -1e-6):
        messages.append("nominal pair: a nonlinear field has sigma >= -1e-6 "
                        f"({np.array2string(nominal_sigma)})")
    xs = np.linspace(-control.eps, control.eps, n_samples)
    max_sigma = np.full(model.n, -np.inf)
    for x in xs:
        try:
            sig = _solve_sigma(model, control.u_l(x), control.u_r(x))[0]
        except (ValidationError, NewtonDivergence) as exc:
            messages.append(f"x={x:.4g}: {exc}")
            continue
        max_sigma = np.maximum(max_sigma, sig)
    bad = gnl & (max_sigma > ADMISSIBLE_SIGMA)
    if np.any(bad):
        messages.append("sampled pairs require rarefactions on fields "
                        f"{list(np.nonzero(bad)[0])}")
    return AdmissibilityReport(not messages, max_sigma, nominal_sigma, messages)
