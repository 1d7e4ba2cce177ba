"""Fixed reference domain, piecewise grid fields and shock-fitted transformations.

Sectors are numbered ``0..n``.  Sector ``j`` of the reference domain is the
wedge between the straight lines ``xbar = left_j(t)`` and ``xbar = right_j(t)``:

* sector 0:      ``[-ell + s_left t, s_0 t]``
* sector j:      ``[s_{j-1} t, s_j t]``            (0 < j < n)
* sector n:      ``[s_{n-1} t, ell + s_right t]``

with ``s_left = +lambda_max`` and ``s_right = -lambda_max``.  Shock ``k``
(zero based) separates sectors ``k`` and ``k+1`` and carries field ``k``.

Inside a sector the normalized coordinate ``sigma in [0, 1]`` is shared by
the reference and the physical picture: ``xbar = abar(t) + sigma wbar(t)`` and
``x = a(t) + sigma w(t)`` where ``a``/``w`` are built from the moving curves.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import system_model as sm
from .errors import (BoundViolation, DegenerateGeometry, DegenerateTime,
                     OutOfSector)


# ---------------------------------------------------------------------------
# reference domain and grid fields
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ReferenceDomain:
    T: float
    ell: float
    speeds: np.ndarray
    lambda_max: float
    M: int
    P: int

    def __post_init__(self):
        s = np.asarray(self.speeds, dtype=float)
        object.__setattr__(self, "speeds", s)
        if self.M < 1 or self.P < 1:
            raise ValueError("grid sizes must be positive")
        if s.size > 1 and np.any(np.diff(s) <= 0):
            raise DegenerateGeometry("reference speeds must be strictly increasing")
        if not (self.lambda_max > np.max(np.abs(s)) - 1e-12):
            raise DegenerateGeometry("lambda_max must bound the fan speeds")

    @property
    def n(self):
        return self.speeds.size

    @property
    def n_sectors(self):
        return self.speeds.size + 1

    @property
    def s_left(self):
        return self.lambda_max

    @property
    def s_right(self):
        return -self.lambda_max

    @property
    def dt(self):
        return self.T / self.M

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.M + 1)

    @property
    def sigmas(self):
        return np.linspace(0.0, 1.0, self.P + 1)

    def is_middle(self, j):
        return 0 < j < self.n

    def edge_coefficients(self, j):
        """(left0, left_rate, right0, right_rate) of the straight sector edges."""
        n = self.n
        if j < 0 or j > n:
            raise OutOfSector(f"sector {j} does not exist")
        if j == 0:
            left = (-self.ell, self.s_left)
        else:
            left = (0.0, self.speeds[j - 1])
        if j == n:
            right = (self.ell, self.s_right)
        else:
            right = (0.0, self.speeds[j])
        return left[0], left[1], right[0], right[1]

    def edges(self, j, t):
        l0, lr, r0, rr = self.edge_coefficients(j)
        t = np.asarray(t, dtype=float)
        return l0 + lr * t, r0 + rr * t

    def width(self, j, t):
        l0, lr, r0, rr = self.edge_coefficients(j)
        return (r0 - l0) + (rr - lr) * np.asarray(t, dtype=float)

    def xbar(self, j, t, sigma):
        left, right = self.edges(j, t)
        return left + np.asarray(sigma, dtype=float) * (right - left)

    def sigma_of(self, j, t, xbar):
        left, right = self.edges(j, t)
        w = right - left
        if np.any(w <= 0):
            raise DegenerateTime("sigma undefined where a middle sector collapses (t = 0)")
        return (np.asarray(xbar, dtype=float) - left) / w

    def node_xbar(self, j):
        """Reference coordinates of all nodes of sector j, shape (M+1, P+1)."""
        return self.xbar(j, self.times[:, None], self.sigmas[None, :])

    def contains(self, j, t, xbar, tol=1e-12):
        left, right = self.edges(j, t)
        return (xbar >= left - tol) & (xbar <= right + tol)

    def refined(self, factor=2):
        return ReferenceDomain(self.T, self.ell, self.speeds, self.lambda_max,
                               self.M * factor, self.P * factor)

    def with_grid(self, M, P):
        return ReferenceDomain(self.T, self.ell, self.speeds, self.lambda_max, M, P)


def build_domain(model, fan, T, ell, M, P):
    return ReferenceDomain(float(T), float(ell), np.array(fan.speeds, dtype=float),
                           float(model.lambda_max), int(M), int(P))


@dataclass
class PiecewiseField:
    """Sector-wise grid function: ``values[j, m, p, :]`` at (t_m, sigma_p)."""

    domain: ReferenceDomain
    values: np.ndarray

    @classmethod
    def zeros(cls, domain, ncomp):
        return cls(domain, np.zeros((domain.n_sectors, domain.M + 1, domain.P + 1, ncomp)))

    @classmethod
    def from_constants(cls, domain, states):
        states = np.asarray(states, dtype=float)
        v = np.broadcast_to(states[:, None, None, :],
                            (domain.n_sectors, domain.M + 1, domain.P + 1, states.shape[-1]))
        return cls(domain, np.array(v))

    @property
    def ncomp(self):
        return self.values.shape[-1]

    def copy(self):
        return PiecewiseField(self.domain, self.values.copy())

    def pc0_norm(self):
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def distance(self, other):
        return float(np.max(np.abs(self.values - other.values)))

    def __add__(self, other):
        return PiecewiseField(self.domain, self.values + other.values)

    def __sub__(self, other):
        return PiecewiseField(self.domain, self.values - other.values)

    def scaled(self, a):
        return PiecewiseField(self.domain, a * self.values)

    def evaluate(self, j, t, sigma):
        """Bilinear interpolation in (t, sigma) inside sector j."""
        return bilinear(self.values[j], self.domain, t, sigma)

    def evaluate_xbar(self, j, t, xbar):
        return self.evaluate(j, t, self.domain.sigma_of(j, t, xbar))

    def column(self, j, side):
        """Trace column at sigma = 0 (side 0) or sigma = 1 (side 1): (M+1, ncomp)."""
        return self.values[j, :, 0 if side == 0 else -1, :]


@dataclass
class Stencil:
    """Flat grid indices and weights of bilinear interpolation at fixed points."""

    index: np.ndarray    # (..., 4)
    weight: np.ndarray   # (..., 4)


def bilinear_stencil(domain, t, sigma):
    t = np.asarray(t, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    a = t / domain.dt
    m0 = np.clip(np.floor(a).astype(int), 0, domain.M - 1)
    th = a - m0
    b = sigma * domain.P
    p0 = np.clip(np.floor(b).astype(int), 0, domain.P - 1)
    ph = b - p0
    stride = domain.P + 1
    base = m0 * stride + p0
    index = np.stack([base, base + 1, base + stride, base + stride + 1], axis=-1)
    weight = np.stack([(1 - th) * (1 - ph), (1 - th) * ph, th * (1 - ph), th * ph], axis=-1)
    return Stencil(index, weight)


def apply_stencil(grid, stencil):
    """Interpolate grid[(M+1), (P+1), c] with a precomputed stencil."""
    flat = grid.reshape(-1, grid.shape[-1])
    idx, w = stencil.index, stencil.weight
    out = w[..., 0, None] * flat[idx[..., 0]]
    for q in range(1, 4):
        out += w[..., q, None] * flat[idx[..., q]]
    return out


def bilinear(grid, domain, t, sigma):
    """Interpolate grid[(M+1), (P+1), c] at arrays t, sigma (same shape)."""
    return apply_stencil(grid, bilinear_stencil(domain, t, sigma))


def linear_in_time(column, domain, t):
    """Linear interpolation of a trace column (M+1, c) at times t."""
    t = np.asarray(t, dtype=float)
    a = t / domain.dt
    m0 = np.clip(np.floor(a).astype(int), 0, domain.M - 1)
    th = (a - m0)[..., None]
    return (1 - th) * column[m0] + th * column[m0 + 1]


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------
@dataclass
class SampledCurve:
    """Curve with piecewise-linear speed samples; position is its exact integral.

    At the grid times the position coincides with the trapezoid rule.
    """

    times: np.ndarray
    rates: np.ndarray
    origin: float

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        dt = self.times[1] - self.times[0]
        self._dt = dt
        self._cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (self.rates[1:] + self.rates[:-1]))])
        self._slopes = np.diff(self.rates) / dt

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        m = np.clip(np.floor(t / self._dt).astype(int), 0, self.rates.size - 2)
        return t, m, t - self.times[m]

    def increment(self, t):
        """Integral of the speed over [0, t]."""
        t, m, tau = self._locate(t)
        return self._cum[m] + self.rates[m] * tau + 0.5 * self._slopes[m] * tau ** 2

    def value(self, t):
        return self.origin + self.increment(t)

    def rate(self, t):
        t, m, tau = self._locate(t)
        return self.rates[m] + self._slopes[m] * tau

    def mean_rate(self, t):
        """increment(t) / t with the t -> 0 limit rate(0)."""
        t = np.asarray(t, dtype=float)
        safe = np.where(t > 0, t, 1.0)
        return np.where(t > 0, self.increment(t) / safe, self.rates[0])

    def excess_over_t(self, t):
        """(rate(t) - mean_rate(t)) / t, exact on the first interval."""
        t = np.asarray(t, dtype=float)
        first = 0.5 * self._slopes[0]
        safe = np.where(t > 0, t, 1.0)
        general = (self.rate(t) - self.mean_rate(t)) / safe
        return np.where(t <= self._dt, first, general)

    def positions(self):
        return self.origin + self._cum


@dataclass
class CurveFamily:
    """Outer boundary curves and one shock curve per field."""

    left: SampledCurve
    right: SampledCurve
    shocks: list

    def curve_ids(self):
        return ["left"] + [f"shock_{k}" for k in range(len(self.shocks))] + ["right"]

    def by_id(self, cid):
        if cid == "left":
            return self.left
        if cid == "right":
            return self.right
        return self.shocks[int(cid.split("_")[1])]

    def sector_curves(self, j):
        n = len(self.shocks)
        lo = self.left if j == 0 else self.shocks[j - 1]
        hi = self.right if j == n else self.shocks[j]
        return lo, hi

    def shock_positions(self, t):
        return np.array([float(c.value(t)) for c in self.shocks])


def trace_states(field):
    """(left-edge trace, right-edge trace, [(minus, plus) per shock]) columns."""
    v = field.values
    n = field.domain.n
    shocks = [(v[k, :, -1, :], v[k + 1, :, 0, :]) for k in range(n)]
    return v[0, :, 0, :], v[n, :, -1, :], shocks


def build_curves(domain, model, ybar, x0):
    """Shock and boundary curves driven by the traces of ``ybar``."""
    times = domain.times
    n = domain.n
    left_tr, right_tr, shock_tr = trace_states(ybar)
    left_rate = sm.eigen_decompose(model, left_tr).lambdas[:, n - 1]
    right_rate = sm.eigen_decompose(model, right_tr).lambdas[:, 0]
    shocks = []
    for k, (ym, yp) in enumerate(shock_tr):
        rate = sm.averaged_eigenvalues(model, ym, yp)[:, k]
        shocks.append(SampledCurve(times, rate, float(x0)))
    return CurveFamily(SampledCurve(times, left_rate, -domain.ell),
                       SampledCurve(times, right_rate, domain.ell), shocks)


def curves_from_rates(domain, x0, left_rate, right_rate, shock_rates):
    times = domain.times
    rates = lambda r: np.broadcast_to(np.asarray(r, dtype=float), times.shape)
    return CurveFamily(SampledCurve(times, rates(left_rate), -domain.ell),
                       SampledCurve(times, rates(right_rate), domain.ell),
                       [SampledCurve(times, rates(r), float(x0)) for r in shock_rates])


def identity_curves(domain, x0=0.0):
    """Curves for which the transformation is a pure shift by x0 (identity at x0=0)."""
    return curves_from_rates(domain, x0, domain.s_left, domain.s_right, domain.speeds)


# ---------------------------------------------------------------------------
# transformations
# ---------------------------------------------------------------------------
@dataclass
class TransformDerivatives:
    x_t: np.ndarray
    x_xbar: np.ndarray
    xbar_t: np.ndarray
    xbar_x: np.ndarray
    x_t_xbar: np.ndarray


def _sector_parts(domain, curves, j, t):
    """a, w, adot, wdot, w/wbar, (wdot - (w/wbar) wbar')/wbar for sector j at t."""
    lo, hi = curves.sector_curves(j)
    l0, lr, r0, rr = domain.edge_coefficients(j)
    t = np.asarray(t, dtype=float)
    a = lo.value(t)
    adot = lo.rate(t)
    wdot = hi.rate(t) - lo.rate(t)
    wbar_rate = rr - lr
    if domain.is_middle(j):
        # both curves start at x0: widths are t times mean speed differences
        mean_diff = hi.mean_rate(t) - lo.mean_rate(t)
        w = mean_diff * t
        ratio = mean_diff / wbar_rate
        mixed = (hi.excess_over_t(t) - lo.excess_over_t(t)) / wbar_rate
    else:
        w = hi.value(t) - lo.value(t)
        wbar = (r0 - l0) + wbar_rate * t
        ratio = w / wbar
        mixed = (wdot - ratio * wbar_rate) / wbar
    return a, w, adot, wdot, ratio, mixed


def to_physical(domain, curves, j, t, xbar):
    t = np.asarray(t, dtype=float)
    if domain.is_middle(j) and np.any(t <= 0):
        raise DegenerateTime("middle sectors collapse at t = 0")
    sigma = domain.sigma_of(j, t, xbar)
    return physical_from_sigma(domain, curves, j, t, sigma)


def physical_from_sigma(domain, curves, j, t, sigma):
    lo, hi = curves.sector_curves(j)
    a = lo.value(t)
    return a + np.asarray(sigma, dtype=float) * (hi.value(t) - a)


def sigma_from_physical(domain, curves, j, t, x):
    lo, hi = curves.sector_curves(j)
    a = lo.value(t)
    w = hi.value(t) - a
    if np.any(w <= 0):
        raise DegenerateGeometry("curves crossed or collapsed")
    return (np.asarray(x, dtype=float) - a) / w


def to_reference(domain, curves, j, t, x):
    t = np.asarray(t, dtype=float)
    if domain.is_middle(j) and np.any(t <= 0):
        raise DegenerateTime("middle sectors collapse at t = 0")
    sigma = sigma_from_physical(domain, curves, j, t, x)
    if np.any(sigma < -1e-12) or np.any(sigma > 1 + 1e-12):
        raise OutOfSector(f"point is not in physical sector {j}")
    return domain.xbar(j, t, sigma)


def transform_derivatives_sigma(domain, curves, j, t, sigma):
    """Transformation derivatives at (t, sigma) of sector j (vectorized)."""
    l0, lr, r0, rr = domain.edge_coefficients(j)
    sigma = np.asarray(sigma, dtype=float)
    a, w, adot, wdot, ratio, mixed = _sector_parts(domain, curves, j, t)
    if np.any(ratio <= 0):
        raise DegenerateGeometry("transformation is not monotone")
    x_t = adot + sigma * wdot - ratio * (lr + sigma * (rr - lr))
    x_xbar = ratio * np.ones_like(sigma)
    return TransformDerivatives(x_t=x_t, x_xbar=x_xbar, xbar_t=-x_t / x_xbar,
                                xbar_x=1.0 / x_xbar,
                                x_t_xbar=mixed * np.ones_like(sigma))


def transform_derivatives(domain, curves, j, t, xbar):
    t = np.asarray(t, dtype=float)
    if domain.is_middle(j) and np.any(t <= 0):
        raise DegenerateTime("use transform_derivatives_sigma at t = 0")
    return transform_derivatives_sigma(domain, curves, j, t, domain.sigma_of(j, t, xbar))


def transformed_eigenvalue(model, derivatives, z, i):
    """lambda_bar_i = xbar_t + xbar_x lambda_i(z)."""
    lam = sm.eigen_decompose(model, z).lambdas[..., i]
    return derivatives.xbar_t + derivatives.xbar_x * lam


def transformed_eigenvalues_sigma(model, domain, curves, j, t, sigma, z):
    """All lambda_bar_i at (t, sigma) in sector j for the states z."""
    d = transform_derivatives_sigma(domain, curves, j, t, sigma)
    lam = sm.eigen_decompose(model, z).lambdas
    return d.xbar_t[..., None] + d.xbar_x[..., None] * lam


# ---------------------------------------------------------------------------
# grid derivatives
# ---------------------------------------------------------------------------
def xbar_derivative(field):
    """Discrete d/dxbar of a PiecewiseField (second order in sigma)."""
    dom = field.domain
    out = np.empty_like(field.values)
    for j in range(dom.n_sectors):
        d_sigma = np.gradient(field.values[j], dom.sigmas, axis=1, edge_order=2) \
            if dom.P >= 2 else np.diff(field.values[j], axis=1).repeat(2, axis=1)
        width = dom.width(j, dom.times)
        if dom.is_middle(j):
            out[j, 1:] = d_sigma[1:] / width[1:, None, None]
            out[j, 0] = out[j, 1]
        else:
            out[j] = d_sigma / width[:, None, None]
    return PiecewiseField(dom, out)


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------
@dataclass
class Check:
    name: str
    lhs: float
    rhs: float
    passed: bool


@dataclass
class GeometryReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def add(self, name, lhs, rhs):
        self.checks.append(Check(name, float(lhs), float(rhs), bool(lhs <= rhs)))


def check_welldefinedness(domain, model, ybar, x0, eps, fan_states=None, curves=None):
    """Smallness conditions making the transformations well defined.

    Checks T <= ell/(6 lambda_max), eps <= ell/6, |x0| < eps and
    ||grad lambda|| (T ||ybar||_PC1 + c_max) <= eta_min / 8, plus the
    non-degeneracy of the curves when given.
    """
    rep = GeometryReport()
    rep.add("T <= ell/(6 lambda_max)", domain.T, domain.ell / (6 * domain.lambda_max))
    rep.add("eps <= ell/6", eps, domain.ell / 6)
    rep.add("|x0| <= eps", abs(x0), eps)
    lo, hi = model.box_bounds()
    pts = np.array(np.meshgrid(*[np.linspace(a, b, 7) for a, b in zip(lo, hi)])).reshape(model.n, -1).T
    grad_norm = float(np.max(np.linalg.norm(sm.eigenvalue_gradient(model, pts), axis=-1)))
    yx = xbar_derivative(ybar)
    yt = np.gradient(ybar.values, domain.times, axis=1) if domain.M >= 1 else 0 * ybar.values
    pc1 = max(ybar.pc0_norm(), float(np.max(np.abs(yx.values))), float(np.max(np.abs(yt))))
    c_max = 0.0
    if fan_states is not None:
        fan_states = np.asarray(fan_states)
        for j in range(1, domain.n):
            c_max = max(c_max, float(np.max(np.abs(ybar.values[j, 0, 0] - fan_states[j]))))
    rep.add("|grad lambda| (T |y|_PC1 + c_max) <= eta_min/8",
            grad_norm * (domain.T * pc1 + c_max), model.eta_min / 8)
    if curves is not None:
        for c in nondegeneracy_checks(domain, curves):
            rep.checks.append(c)
    return rep


def nondegeneracy_checks(domain, curves):
    t = domain.times[1:]
    out = []
    for j in range(domain.n_sectors):
        lo, hi = curves.sector_curves(j)
        if domain.is_middle(j):
            ds = domain.speeds[j] - domain.speeds[j - 1]
            mean = hi.mean_rate(t) - lo.mean_rate(t)
            out.append(Check(f"sector {j} width >= (s_j+1 - s_j) t / 2",
                             float(-np.min(mean)), float(-0.5 * ds), bool(np.min(mean) >= 0.5 * ds)))
            out.append(Check(f"sector {j} width <= 2 (s_j+1 - s_j) t",
                             float(np.max(mean)), float(2 * ds), bool(np.max(mean) <= 2 * ds)))
        else:
            w = hi.value(domain.times) - lo.value(domain.times)
            out.append(Check(f"sector {j} width >= ell/2", float(-np.min(w)),
                             float(-domain.ell / 2), bool(np.min(w) >= domain.ell / 2)))
            out.append(Check(f"sector {j} width <= 2 ell", float(np.max(w)),
                             float(2 * domain.ell), bool(np.max(w) <= 2 * domain.ell)))
    return out


def require(report, error=BoundViolation):
    if not report.passed:
        msg = "; ".join(f"{c.name} (lhs={c.lhs:.4g}, rhs={c.rhs:.4g})" for c in report.failures())
        raise error(msg)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------
def fmt(v):
    return format(float(v), ".17g")


def atomic_write_text(path, text):
    """Write text to path via a temporary file in the same directory + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def field_csv_rows(domain, curves, field, sectors=None):
    ncomp = field.ncomp
    header = "# columns: sector,t,xbar,x_physical," + ",".join(f"y_{c + 1}" for c in range(ncomp))
    lines = [header]
    sectors = range(domain.n_sectors) if sectors is None else sectors
    for j in sectors:
        xb = domain.node_xbar(j)
        for m, t in enumerate(domain.times):
            xp = physical_from_sigma(domain, curves, j, t, domain.sigmas)
            for p in range(domain.P + 1):
                vals = ",".join(fmt(v) for v in field.values[j, m, p])
                lines.append(f"{j},{fmt(t)},{fmt(xb[m, p])},{fmt(xp[p])},{vals}")
    return "\n".join(lines) + "\n"


def curves_csv(domain, curves):
    lines = ["# columns: curve_id,t,xi,xi_dot"]
    for cid in curves.curve_ids():
        c = curves.by_id(cid)
        pos = c.positions()
        for m, t in enumerate(domain.times):
            lines.append(f"{cid},{fmt(t)},{fmt(pos[m])},{fmt(c.rates[m])}")
    return "\n".join(lines) + "\n"
