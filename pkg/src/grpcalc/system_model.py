"""Hyperbolic systems of balance laws and their pointwise algebra.

A :class:`SystemModel` bundles the flux ``f``, its Jacobian ``A = Df``, an
optional source ``g(t, x, y)`` and the speed/field data derived from a
working box of states.  All functions are vectorized: states are arrays of
shape ``(..., n)`` and matrices ``(..., n, n)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import NonConvergence, NotStrictlyHyperbolic

GNL = "GenuinelyNonlinear"
LD = "LinearlyDegenerate"
MIXED = "Mixed"

HYPERBOLICITY_GAP = 1e-8
SIGN_THRESHOLD = 1e-8

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


# ---------------------------------------------------------------------------
# builtin fluxes (module level classes so models pickle for worker pools)
# ---------------------------------------------------------------------------
class LinearDiagFlux:
    """f(y) = (-y1, y2): two decoupled transport equations."""

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.stack([-y[..., 0], y[..., 1]], axis=-1)

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        A = np.zeros(y.shape[:-1] + (2, 2))
        A[..., 0, 0] = -1.0
        A[..., 1, 1] = 1.0
        return A


class BurgersPairFlux:
    """f(y) = (y1^2/2 - y1, y2^2/2 + y2): decoupled Burgers equations."""

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.stack([0.5 * y[..., 0] ** 2 - y[..., 0],
                         0.5 * y[..., 1] ** 2 + y[..., 1]], axis=-1)

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        A = np.zeros(y.shape[:-1] + (2, 2))
        A[..., 0, 0] = y[..., 0] - 1.0
        A[..., 1, 1] = y[..., 1] + 1.0
        return A


class PSystemFlux:
    """Lagrangian p-system (v, u): v_t - u_x = 0, u_t + p(v)_x = 0, p = a^2/v."""

    def __init__(self, a=1.0):
        self.a = float(a)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.stack([-y[..., 1], self.a ** 2 / y[..., 0]], axis=-1)

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        A = np.zeros(y.shape[:-1] + (2, 2))
        A[..., 0, 1] = -1.0
        A[..., 1, 0] = -self.a ** 2 / y[..., 0] ** 2
        return A


class ForwardDifferenceJacobian:
    """Forward finite-difference Jacobian of a vectorized flux."""

    def __init__(self, flux, n, step=1e-7):
        self.flux = flux
        self.n = n
        self.step = step

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        f0 = self.flux(y)
        A = np.empty(y.shape[:-1] + (self.n, self.n))
        for k in range(self.n):
            h = self.step * (1.0 + np.abs(y[..., k]))
            yk = y.copy()
            yk[..., k] += h
            A[..., :, k] = (self.flux(yk) - f0) / h[..., None]
        return A


class ShiftedFlux:
    def __init__(self, flux, c):
        self.flux = flux
        self.c = np.asarray(c, dtype=float)

    def __call__(self, y):
        return self.flux(np.asarray(y, dtype=float) + self.c)


class ShiftedSource:
    def __init__(self, source, c):
        self.source = source
        self.c = np.asarray(c, dtype=float)

    def __call__(self, t, x, y):
        return self.source(t, x, np.asarray(y, dtype=float) + self.c)


# ---------------------------------------------------------------------------
# eigen-structure
# ---------------------------------------------------------------------------
@dataclass
class EigenDecomposition:
    """Ordered eigen-decomposition, possibly batched over leading axes.

    ``right[..., :, i]`` is the unit right eigenvector r_i and
    ``left[..., i, :]`` the left eigenvector l_i with ``l_i . r_j = delta_ij``.
    """

    lambdas: np.ndarray
    right: np.ndarray
    left: np.ndarray


def _fix_signs(R):
    """Flip columns so the first component with |.| > 1e-8 is positive."""
    n = R.shape[-1]
    for i in range(n):
        col = R[..., :, i]
        significant = np.abs(col) > SIGN_THRESHOLD
        first = np.argmax(significant, axis=-1)
        lead = np.take_along_axis(col, first[..., None], axis=-1)[..., 0]
        flip = np.where(lead < 0.0, -1.0, 1.0)
        R[..., :, i] = col * flip[..., None]
    return R


def _eigen_2x2(A):
    a, b = A[..., 0, 0], A[..., 0, 1]
    c, d = A[..., 1, 0], A[..., 1, 1]
    mean = 0.5 * (a + d)
    disc = (0.5 * (a - d)) ** 2 + b * c
    if np.any(disc < (0.5 * HYPERBOLICITY_GAP) ** 2):
        raise NotStrictlyHyperbolic(
            "eigenvalues closer than 1e-8 or complex (min discriminant "
            f"{float(np.min(disc)):.3e})")
    root = np.sqrt(disc)
    lam = np.stack([mean - root, mean + root], axis=-1)
    R = np.empty(A.shape)
    for i in range(2):
        li = lam[..., i]
        v1 = np.stack([b, li - a], axis=-1)
        v2 = np.stack([li - d, c], axis=-1)
        n1 = np.linalg.norm(v1, axis=-1)
        n2 = np.linalg.norm(v2, axis=-1)
        v = np.where((n1 >= n2)[..., None], v1, v2)
        R[..., :, i] = v / np.maximum(n1, n2)[..., None]
    R = _fix_signs(R)
    det = R[..., 0, 0] * R[..., 1, 1] - R[..., 0, 1] * R[..., 1, 0]
    L = np.empty(A.shape)
    L[..., 0, 0] = R[..., 1, 1] / det
    L[..., 0, 1] = -R[..., 0, 1] / det
    L[..., 1, 0] = -R[..., 1, 0] / det
    L[..., 1, 1] = R[..., 0, 0] / det
    return EigenDecomposition(lam, R, L)


def _eigen_general(A):
    w, V = np.linalg.eig(A)
    if np.any(np.abs(w.imag) > 1e-12 * (1.0 + np.abs(w.real))):
        raise NotStrictlyHyperbolic("complex eigenvalues")
    w = w.real
    V = V.real
    order = np.argsort(w, axis=-1)
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[..., None, :], axis=-1)
    if w.shape[-1] > 1 and np.any(np.diff(w, axis=-1) < HYPERBOLICITY_GAP):
        raise NotStrictlyHyperbolic("eigenvalues closer than 1e-8")
    V = V / np.linalg.norm(V, axis=-2, keepdims=True)
    V = _fix_signs(V)
    L = np.linalg.inv(V)
    if not np.all(np.isfinite(L)):
        raise NonConvergence("eigenvector matrix is singular")
    return EigenDecomposition(w, V, L)


def eigen_of_matrix(A):
    """Ordered, normalized eigen-decomposition of a (batched) real matrix."""
    A = np.asarray(A, dtype=float)
    if A.shape[-1] == 1:
        ones = np.ones(A.shape)
        return EigenDecomposition(A[..., 0].copy(), ones, ones.copy())
    if A.shape[-1] == 2:
        return _eigen_2x2(A)
    return _eigen_general(A)


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SystemModel:
    """A strictly hyperbolic system ``y_t + f(y)_x = g(t, x, y)``.

    Speed data (``lambda_max``, ``field_intervals``, ``eta_min``,
    ``field_kinds``) are sampled on the working box
    ``box_center +- box_radius`` (L-infinity ball).
    """

    n: int
    flux: Callable
    flux_jacobian: Callable
    source: Optional[Callable]
    lambda_max: float
    field_intervals: np.ndarray
    eta_min: float
    field_kinds: tuple
    box_center: np.ndarray
    box_radius: float
    name: str = "user"
    params: dict = field(default_factory=dict)

    # -- pointwise algebra --------------------------------------------------
    def f(self, y):
        return self.flux(np.asarray(y, dtype=float))

    def jacobian(self, y):
        return self.flux_jacobian(np.asarray(y, dtype=float))

    @property
    def has_source(self):
        return self.source is not None

    def g(self, t, x, y):
        y = np.asarray(y, dtype=float)
        if self.source is None:
            return np.zeros(y.shape)
        t = np.broadcast_to(np.asarray(t, dtype=float), y.shape[:-1])
        x = np.broadcast_to(np.asarray(x, dtype=float), y.shape[:-1])
        return np.asarray(self.source(t, x, y), dtype=float)

    def source_derivatives(self, t, x, y, step=1e-6):
        """Central-difference (g_x, g_y) with shapes (..., n), (..., n, n)."""
        y = np.asarray(y, dtype=float)
        gx = np.zeros(y.shape)
        gy = np.zeros(y.shape + (self.n,))
        if self.source is None:
            return gx, gy
        x = np.broadcast_to(np.asarray(x, dtype=float), y.shape[:-1])
        hx = step * (1.0 + np.abs(x))
        gx = (self.g(t, x + hx, y) - self.g(t, x - hx, y)) / (2 * hx[..., None])
        for k in range(self.n):
            h = step * (1.0 + np.abs(y[..., k]))
            yp = y.copy()
            ym = y.copy()
            yp[..., k] += h
            ym[..., k] -= h
            gy[..., :, k] = (self.g(t, x, yp) - self.g(t, x, ym)) / (2 * h[..., None])
        return gx, gy

    def box_bounds(self):
        c = np.asarray(self.box_center, dtype=float)
        return c - self.box_radius, c + self.box_radius


def _box_samples(lo, hi, grid_count):
    axes = [np.linspace(a, b, grid_count) for a, b in zip(lo, hi)]
    return np.array(list(itertools.product(*axes)), dtype=float)


def build_model(n, flux, jacobian=None, source=None, box_center=None,
                box_radius=0.5, grid_count=9, lambda_max=None, name="user",
                params=None):
    """Assemble a :class:`SystemModel`, sampling speed data on the box."""
    if jacobian is None:
        jacobian = ForwardDifferenceJacobian(flux, n)
    center = np.zeros(n) if box_center is None else np.asarray(box_center, dtype=float)
    proto = SystemModel(n=n, flux=flux, flux_jacobian=jacobian, source=source,
                        lambda_max=1.0, field_intervals=np.zeros((n, 2)),
                        eta_min=1.0, field_kinds=tuple([GNL] * n),
                        box_center=center, box_radius=float(box_radius),
                        name=name, params=dict(params or {}))
    lo, hi = proto.box_bounds()
    pts = _box_samples(lo, hi, grid_count)
    lam = eigen_decompose(proto, pts).lambdas
    intervals = np.stack([lam.min(axis=0), lam.max(axis=0)], axis=-1)
    if n > 1:
        gaps = intervals[1:, 0] - intervals[:-1, 1]
        if np.any(gaps <= 0):
            raise NotStrictlyHyperbolic(
                "field intervals overlap on the working box; shrink the box")
        eta = float(gaps.min())
    else:
        eta = float("inf")
    lmax = float(np.abs(lam).max()) if lambda_max is None else float(lambda_max)
    if lmax <= 0:
        lmax = 1.0
    kinds = tuple(classify_fields(proto, (lo, hi), grid_count))
    return replace(proto, lambda_max=lmax, field_intervals=intervals,
                   eta_min=eta, field_kinds=kinds)


def builtin_model(name, params=None, box_center=None, box_radius=0.5,
                  lambda_max=None):
    """Builtin models: ``linear_diag``, ``burgers_pair``, ``p_system``."""
    params = dict(params or {})
    if name == "linear_diag":
        flux = LinearDiagFlux()
        center = np.zeros(2) if box_center is None else box_center
    elif name == "burgers_pair":
        flux = BurgersPairFlux()
        center = np.zeros(2) if box_center is None else box_center
    elif name == "p_system":
        a = float(params.get("a", 1.0))
        if a <= 0:
            raise ValueError("p_system requires a > 0")
        flux = PSystemFlux(a)
        center = np.array([1.0, 0.0]) if box_center is None else box_center
    else:
        raise ValueError(f"unknown builtin model {name!r}")
    return build_model(2, flux, jacobian=flux.jacobian, box_center=center,
                       box_radius=box_radius, lambda_max=lambda_max,
                       name=name, params=params)


def default_working_box(uL, uR, M0, M1, eps, ell):
    """Center and radius of the default L-infinity working box.

    Radius |u_L - u_R|/2 + 2 M0 + M1 (eps + ell), centered at the mean of the
    nominal states.
    """
    uL = np.asarray(uL, dtype=float)
    uR = np.asarray(uR, dtype=float)
    radius = 0.5 * np.linalg.norm(uL - uR) + 2 * M0 + M1 * (eps + ell)
    return 0.5 * (uL + uR), float(radius)


def eigen_decompose(model, y):
    """Ordered eigen-decomposition of A(y) (batched over leading axes)."""
    return eigen_of_matrix(model.jacobian(y))


def averaged_jacobian(model, y1, y2):
    """Integral mean of A along the segment from y2 to y1 and its eigen-data.

    Uses 5-point Gauss-Legendre quadrature, exact for Jacobians polynomial of
    degree <= 9 along the segment.
    """
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    A = 0.0
    for s, w in zip(_GL_NODES, _GL_WEIGHTS):
        A = A + w * model.jacobian(s * y1 + (1.0 - s) * y2)
    return A, eigen_of_matrix(A)


def averaged_eigenvalues(model, y1, y2):
    return averaged_jacobian(model, y1, y2)[1].lambdas


def _fd_steps(y):
    return 1e-5 * (1.0 + np.linalg.norm(y, axis=-1))


def eigenvalue_gradient(model, y):
    """Central-FD gradients: result[..., i, k] = d lambda_i / d y_k."""
    y = np.asarray(y, dtype=float)
    h = _fd_steps(y)
    out = np.empty(y.shape[:-1] + (model.n, model.n))
    for k in range(model.n):
        yp = y.copy()
        ym = y.copy()
        yp[..., k] += h
        ym[..., k] -= h
        lp = eigen_decompose(model, yp).lambdas
        lm = eigen_decompose(model, ym).lambdas
        out[..., :, k] = (lp - lm) / (2 * h[..., None])
    return out


def left_vector_gradient(model, y):
    """Central-FD gradients: result[..., i, c, k] = d (l_i)_c / d y_k."""
    y = np.asarray(y, dtype=float)
    h = _fd_steps(y)
    out = np.empty(y.shape[:-1] + (model.n, model.n, model.n))
    for k in range(model.n):
        yp = y.copy()
        ym = y.copy()
        yp[..., k] += h
        ym[..., k] -= h
        Lp = eigen_decompose(model, yp).left
        Lm = eigen_decompose(model, ym).left
        out[..., :, :, k] = (Lp - Lm) / (2 * h[..., None, None])
    return out


def jacobian_gradient(model, y):
    """Central-FD derivative of A: result[..., :, :, k] = dA / d y_k."""
    y = np.asarray(y, dtype=float)
    h = _fd_steps(y)
    out = np.empty(y.shape[:-1] + (model.n, model.n, model.n))
    for k in range(model.n):
        yp = y.copy()
        ym = y.copy()
        yp[..., k] += h
        ym[..., k] -= h
        out[..., :, :, k] = (model.jacobian(yp) - model.jacobian(ym)) / (2 * h[..., None, None])
    return out


def averaged_eigenvalue_gradient(model, y1, y2, j):
    """Gradient of lambda_j(y1, y2) w.r.t. (y1, y2); shape (..., 2n).

    ``j`` is the zero-based field index.
    """
    y = np.concatenate([np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)], axis=-1)
    n = model.n
    h = _fd_steps(y)
    out = np.empty(y.shape)
    for k in range(2 * n):
        yp = y.copy()
        ym = y.copy()
        yp[..., k] += h
        ym[..., k] -= h
        lp = averaged_eigenvalues(model, yp[..., :n], yp[..., n:])[..., j]
        lm = averaged_eigenvalues(model, ym[..., :n], ym[..., n:])[..., j]
        out[..., k] = (lp - lm) / (2 * h)
    return out


def nonlinearity_coefficients(model, y):
    """grad(lambda_i) . r_i for every field, shape (..., n)."""
    grad = eigenvalue_gradient(model, y)
    R = eigen_decompose(model, y).right
    return np.einsum("...ik,...ki->...i", grad, R)


def classify_fields(model, sample_box, grid_count=9):
    """Classify each field as genuinely nonlinear, linearly degenerate or mixed.

    ``grad(lambda_i) . r_i`` is computed by central differences with step
    ``1e-5 * box width`` on a ``grid_count^n`` grid of the box ``(lo, hi)``.
    """
    lo, hi = (np.asarray(b, dtype=float) for b in sample_box)
    pts = _box_samples(lo, hi, grid_count)
    h = 1e-5 * float(np.max(hi - lo)) if np.max(hi - lo) > 0 else 1e-5
    grad = np.empty((pts.shape[0], model.n, model.n))
    for k in range(model.n):
        yp = pts.copy()
        ym = pts.copy()
        yp[:, k] += h
        ym[:, k] -= h
        grad[:, :, k] = (eigen_decompose(model, yp).lambdas
                         - eigen_decompose(model, ym).lambdas) / (2 * h)
    R = eigen_decompose(model, pts).right
    coef = np.einsum("pik,pki->pi", grad, R)
    kinds = []
    for i in range(model.n):
        c = coef[:, i]
        if np.all(np.abs(c) < 1e-8):
            kinds.append(LD)
        elif (np.all(c > 1e-6) or np.all(c < -1e-6)):
            kinds.append(GNL)
        else:
            kinds.append(MIXED)
    return kinds


def shift_system(model, c):
    """Model for the shifted unknown y - c: f^(y) = f(y + c), g^ = g(., y + c)."""
    c = np.asarray(c, dtype=float)
    if np.all(c == 0.0):
        return model
    flux = ShiftedFlux(model.flux, c)
    jac = ShiftedFlux(model.flux_jacobian, c)
    source = None if model.source is None else ShiftedSource(model.source, c)
    return replace(model, flux=flux, flux_jacobian=jac, source=source,
                   box_center=np.asarray(model.box_center) - c,
                   name=f"{model.name}-shifted")
