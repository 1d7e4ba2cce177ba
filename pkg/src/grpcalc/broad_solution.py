"""Broad solutions of semilinear hyperbolic problems on the reference domain.

The problem is posed in characteristic variables ``v_i = l_i(z) . v`` with a
frozen coefficient field ``z``.  Along the i-characteristics
``d xbar / ds = lambda_bar_i(s, xbar)`` of sector ``j``

    d/ds v_i = l_i(z) . h(v) + (d/ds l_i(z)) . v ,

where the last term is integrated as a Stieltjes sum over the path nodes.
Characteristics are traced backward until they reach

* the initial line ``t = 0`` (outer sectors 0 and n),
* the left boundary shock (middle sectors, fields ``i >= j``),
* the right boundary shock (middle sectors, fields ``i < j``).

At a shock exit the value is produced by a boundary operator that is affine
in the live arguments: ``a * v_transported + p . y_from + q . y_to + c`` with
coefficients depending on the exit time and the frozen field only.  Here
``y_from`` is the state on the side the characteristic information comes
from, ``y_to`` the state of the receiving sector.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import system_model as sm
from .errors import DegenerateGeometry, NoContraction, NoExit
from .reference_geometry import (PiecewiseField, _sector_parts, apply_stencil,
                                 bilinear, bilinear_stencil, linear_in_time)

EXIT_INITIAL = 0
EXIT_LEFT = 1
EXIT_RIGHT = 2
EXIT_NAMES = {EXIT_INITIAL: "InitialLine", EXIT_LEFT: "LeftShock", EXIT_RIGHT: "RightShock"}


# ---------------------------------------------------------------------------
# problem description
# ---------------------------------------------------------------------------
class BoundaryOperator:
    """Affine interior boundary rule; subclasses supply the coefficients.

    ``coefficients(problem, k, i, t, z_from, z_to)`` returns ``(a, p, q, c)``
    for exits of field ``i`` through shock ``k`` at times ``t`` (arrays).
    """

    def coefficients(self, problem, k, i, t, z_from, z_to):
        raise NotImplementedError


class PassThrough(BoundaryOperator):
    """F(t, v, y_from, y_to) = v."""

    def coefficients(self, problem, k, i, t, z_from, z_to):
        N = np.shape(t)[0]
        n = problem.n
        return np.ones(N), np.zeros((N, n)), np.zeros((N, n)), np.zeros(N)


class SourceTerm:
    """Interface of h(v): values at points of sector j (vectorized)."""

    active = True

    def prepare(self, problem, j, node_t, node_sigma, stencil=None):
        return None

    def begin(self, problem, iterate):
        return None

    def values(self, problem, context, j, node_t, node_sigma, v, data):
        raise NotImplementedError


class FunctionSource(SourceTerm):
    """h(v) = func(j, t, xbar, v) given in reference coordinates."""

    def __init__(self, func):
        self.func = func

    def values(self, problem, context, j, node_t, node_sigma, v, data):
        xbar = problem.domain.xbar(j, node_t, node_sigma)
        return np.asarray(self.func(j, node_t, xbar, v), dtype=float) * np.ones(v.shape)


class BalanceLawSource(SourceTerm):
    """h(v) = g(t, x(t, xbar), v) of a balance law."""

    def __init__(self, model):
        self.model = model
        self.active = model.has_source

    def prepare(self, problem, j, node_t, node_sigma, stencil=None):
        t = np.nan_to_num(node_t)
        s = np.nan_to_num(node_sigma)
        lo, hi = problem.curves.sector_curves(j)
        a = lo.value(t)
        return {"x": a + s * (hi.value(t) - a)}

    def values(self, problem, context, j, node_t, node_sigma, v, data):
        return self.model.g(np.nan_to_num(node_t), data["x"], v)


@dataclass
class SemilinearProblem:
    model: object
    domain: object
    curves: object
    z: PiecewiseField
    x0: float
    initial_left: Callable
    initial_right: Callable
    boundary: BoundaryOperator
    source: Optional[SourceTerm] = None
    t0_states: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.domain.n

    def __post_init__(self):
        dom = self.domain
        if self.t0_states is None:
            self.t0_states = self.z.values[:, 0, 0, :].copy()
        eig = sm.eigen_decompose(self.model, self.z.values)
        self.frame_right = eig.right
        self.frame_left = eig.left
        # eigenvalues of the frozen field on the grid; tracing interpolates these
        self.node_lambdas = eig.lambdas
        self._paths = None

    # --- exit rule ----------------------------------------------------------
    def exit_kind(self, j, i):
        if j == 0 or j == self.n:
            return EXIT_INITIAL
        return EXIT_LEFT if i >= j else EXIT_RIGHT

    def paths(self):
        if self._paths is None:
            self._paths = {(j, i): trace_sector(self, j, i)
                           for j in range(self.domain.n_sectors) for i in range(self.n)}
            for ps in self._paths.values():
                _prepare_pathset(self, ps)
        return self._paths


# ---------------------------------------------------------------------------
# characteristic tracing
# ---------------------------------------------------------------------------
@dataclass
class PathSet:
    """Backward characteristics of field ``i`` in sector ``j`` from many origins."""

    sector: int
    field: int
    origin_t: np.ndarray
    origin_sigma: np.ndarray
    exit_kind: int
    exit_time: np.ndarray
    exit_xbar: np.ndarray
    exit_sigma: np.ndarray
    node_t: np.ndarray
    node_sigma: np.ndarray
    m_idx: Optional[np.ndarray] = None
    p_idx: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def valid(self):
        return ~np.isnan(self.node_t)

    def trapezoid_weights(self):
        t = self.node_t
        seg = t[:, :-1] - t[:, 1:]
        seg = np.where(np.isnan(seg), 0.0, seg)
        w = np.zeros_like(t)
        w[:, :-1] += 0.5 * seg
        w[:, 1:] += 0.5 * seg
        return w


@dataclass
class CharacteristicPath:
    origin: tuple
    exit_kind: str
    exit_time: float
    exit_xbar: float
    node_t: np.ndarray
    node_xbar: np.ndarray


def _lambda_bar(problem, j, i, s, x):
    """lambda_bar_i at one time s and positions x of sector j."""
    return _SpeedTable(problem, j, i, np.array([float(s)])).evaluate(0, x)


class _SpeedTable:
    """lambda_bar_i of sector j tabulated on the sigma grid at given times.

    At each time ``lambda_bar = (lambda_i(z) - x_t) / x_xbar`` with
    ``x_t = c0 + sigma c1`` affine in sigma, so a row of eigenvalues plus
    three scalars describe the whole cross-section.
    """

    def __init__(self, problem, j, i, times):
        dom = problem.domain
        times = np.asarray(times, dtype=float)
        l0, lr, r0, rr = dom.edge_coefficients(j)
        self.left = l0 + lr * times
        self.right = r0 + rr * times
        _, _, adot, wdot, ratio, _ = _sector_parts(dom, problem.curves, j, times)
        if np.any(ratio <= 0):
            raise DegenerateGeometry("transformation is not monotone")
        self.c0 = adot - ratio * lr
        self.c1 = wdot - ratio * (rr - lr)
        self.ratio = ratio
        a = times / dom.dt
        m0 = np.clip(np.floor(a).astype(int), 0, dom.M - 1)
        th = (a - m0)[:, None]
        lam = problem.node_lambdas[j, :, :, i]
        self.rows = (1 - th) * lam[m0] + th * lam[m0 + 1]
        self.P = dom.P

    def evaluate(self, k, x):
        w = self.right[k] - self.left[k]
        if w > 0:
            sigma = np.clip((x - self.left[k]) / w, 0.0, 1.0)
        else:
            sigma = np.full_like(x, 0.5)
        b = sigma * self.P
        p0 = np.clip(np.floor(b).astype(int), 0, self.P - 1)
        ph = b - p0
        row = self.rows[k]
        lam = (1 - ph) * row[p0] + ph * row[p0 + 1]
        return (lam - (self.c0[k] + sigma * self.c1[k])) / self.ratio[k]


def _trace_batch(problem, j, i, schedule, record, start_index, start_x):
    """Trace many origins backward along a shared decreasing time schedule.

    ``schedule[k]`` are times (ending at 0); origin ``q`` starts at
    ``schedule[start_index[q]]`` at position ``start_x[q]``.  Node positions
    are recorded where ``record[k]`` is true and at exits.
    """
    dom = problem.domain
    N = start_x.size
    K = int(np.count_nonzero(record)) + 2
    node_t = np.full((N, K), np.nan)
    node_x = np.full((N, K), np.nan)
    ncol = np.zeros(N, dtype=int)
    x = start_x.astype(float).copy()
    alive = np.ones(N, dtype=bool)
    exit_time = np.zeros(N)
    exit_x = np.zeros(N)
    kind = problem.exit_kind(j, i)
    lam_max = dom.lambda_max
    tol = 1e-6 * dom.ell + 0.05 * dom.dt * lam_max

    def side_gap(k, xv, side):
        left, right = speeds.left[k], speeds.right[k]
        return (xv - left) if side == EXIT_LEFT else (right - xv)

    def write(idx, s, xv):
        node_t[idx, ncol[idx]] = s
        node_x[idx, ncol[idx]] = xv
        ncol[idx] += 1

    nsteps = schedule.size - 1
    speeds = _SpeedTable(problem, j, i, schedule)
    for k in range(nsteps + 1):
        s = schedule[k]
        act = np.nonzero(alive & (start_index <= k))[0]
        if act.size == 0:
            if k >= start_index.max():
                break
            continue
        is_last = k == nsteps
        rec = act if (record[k] or is_last) else act[start_index[act] == k]
        if rec.size:
            write(rec, s, x[rec])
        if is_last:
            # every path still alive reaches t = 0
            exit_time[act] = 0.0
            if kind == EXIT_INITIAL:
                exit_x[act] = x[act]
            else:
                left, right = dom.edges(j, 0.0)
                exit_x[act] = left if kind == EXIT_LEFT else right
                x[act] = exit_x[act]
            alive[act] = False
            break
        s_new = schedule[k + 1]
        h = s - s_new
        xa = x[act]
        k1 = speeds.evaluate(k, xa)
        xp = xa - h * k1
        k2 = speeds.evaluate(k + 1, xp)
        xn = xa - 0.5 * h * (k1 + k2)
        left_n, right_n = speeds.left[k + 1], speeds.right[k + 1]
        if kind != EXIT_INITIAL:
            g_old = side_gap(k, xa, kind)
            g_new = side_gap(k + 1, xn, kind)
            crossed = g_new < 0
            if np.any(crossed):
                c = act[crossed]
                go = np.maximum(g_old[crossed], 0.0)
                theta = np.clip(go / (go - g_new[crossed]), 0.0, 1.0)
                te = s - theta * h
                left_e, right_e = dom.edges(j, te)
                xe = left_e if kind == EXIT_LEFT else right_e
                exit_time[c] = te
                exit_x[c] = xe
                write(c, te, xe)
                alive[c] = False
                x[c] = xe
            keep = ~crossed
            act, xn = act[keep], xn[keep]
        # lateral clamp on the non-exit sides
        lo_gap = xn - left_n
        hi_gap = right_n - xn
        check_lo = kind != EXIT_LEFT
        check_hi = kind != EXIT_RIGHT
        bad = np.zeros(xn.shape, dtype=bool)
        if check_lo:
            bad |= lo_gap < -tol
        if check_hi:
            bad |= hi_gap < -tol
        if np.any(bad):
            raise NoExit(f"characteristic of field {i} left sector {j} laterally "
                         f"(overshoot {float(max(-lo_gap.min(), -hi_gap.min())):.3e})")
        x[act] = np.clip(xn, left_n, right_n)
    if np.any(alive):
        raise NoExit("characteristic did not reach an exit")
    return exit_time, exit_x, node_t, node_x


def _grid_schedule(dom):
    sub = 4
    steps = sub * dom.M
    schedule = dom.dt / sub * np.arange(steps, -1, -1, dtype=float)
    schedule[-1] = 0.0
    record = (np.arange(steps + 1) % sub) == 0
    return schedule, record


def trace_sector(problem, j, i):
    """Trace field i from every node of sector j (t = 0 rows of middle sectors
    are excluded: they carry the principal part)."""
    dom = problem.domain
    schedule, record = _grid_schedule(dom)
    m_first = 1 if dom.is_middle(j) else 0
    mm, pp = np.meshgrid(np.arange(m_first, dom.M + 1), np.arange(dom.P + 1), indexing="ij")
    mm = mm.ravel()
    pp = pp.ravel()
    t0 = dom.times[mm]
    sig0 = dom.sigmas[pp]
    x0 = dom.xbar(j, t0, sig0)
    start_index = 4 * (dom.M - mm)
    et, ex, nt, nx = _trace_batch(problem, j, i, schedule, record, start_index, x0)
    kind = problem.exit_kind(j, i)
    nsig = _node_sigma(dom, j, nt, nx)
    if kind == EXIT_INITIAL:
        esig = dom.sigma_of(j, 0.0, ex)
    else:
        esig = np.full(et.shape, 0.0 if kind == EXIT_LEFT else 1.0)
    return PathSet(j, i, t0, sig0, kind, et, ex, esig, nt, nsig, mm, pp)


def _node_sigma(dom, j, nt, nx):
    left, right = dom.edges(j, np.nan_to_num(nt))
    w = right - left
    with np.errstate(invalid="ignore", divide="ignore"):
        sig = np.where(w > 0, (nx - left) / np.where(w > 0, w, 1.0), 0.5)
    sig = np.clip(sig, 0.0, 1.0)
    return np.where(np.isnan(nt), np.nan, sig)


def trace_characteristic(problem, i, t, xbar, j, substeps_per_dt=4):
    """Backward i-characteristic from a single point (t, xbar) of sector j."""
    dom = problem.domain
    if not dom.contains(j, t, xbar, tol=1e-12):
        raise NoExit("origin is not inside the sector")
    h = dom.dt / substeps_per_dt
    nfull = int(np.floor(t / h + 1e-12))
    schedule = list(t - h * np.arange(nfull + 1))
    if schedule[-1] > 1e-14:
        schedule.append(0.0)
    else:
        schedule[-1] = 0.0
    schedule = np.array(schedule)
    record = (np.arange(schedule.size) % substeps_per_dt) == 0
    et, ex, nt, nx = _trace_batch(problem, j, i, schedule, record,
                                  np.array([0]), np.array([float(xbar)]))
    ok = ~np.isnan(nt[0])
    return CharacteristicPath((float(t), float(xbar), j, i),
                              EXIT_NAMES[problem.exit_kind(j, i)],
                              float(et[0]), float(ex[0]), nt[0, ok], nx[0, ok])


# ---------------------------------------------------------------------------
# precomputation per path set (frozen field only)
# ---------------------------------------------------------------------------
def _node_stencil(ps, dom):
    st = ps.extra.get("stencil")
    if st is None:
        st = bilinear_stencil(dom, np.nan_to_num(ps.node_t), np.nan_to_num(ps.node_sigma))
        ps.extra["stencil"] = st
    return st


def _prepare_pathset(problem, ps):
    dom = problem.domain
    j, i = ps.sector, ps.field
    n = problem.n
    # frame variation along the paths
    frame_grid = problem.frame_left[j][:, :, i, :]
    varies = float(np.max(np.ptp(frame_grid.reshape(-1, n), axis=0))) > 1e-14
    ps.extra["frame_varies"] = varies
    if varies:
        ps.extra["frame_nodes"] = apply_stencil(frame_grid, _node_stencil(ps, dom))
    ps.extra["weights"] = ps.trapezoid_weights()
    if problem.source is not None and problem.source.active:
        ps.extra["source_data"] = problem.source.prepare(problem, j, ps.node_t, ps.node_sigma,
                                                             _node_stencil(ps, dom))
        if not varies:
            ps.extra["frame_nodes"] = np.broadcast_to(frame_grid[0, 0], ps.node_t.shape + (n,))
    if ps.exit_kind == EXIT_INITIAL:
        ps.extra["init_value"] = _initial_value(problem, ps)
    else:
        k = j - 1 if ps.exit_kind == EXIT_LEFT else j
        src = k if ps.exit_kind == EXIT_LEFT else k + 1
        src_side = 1 if ps.exit_kind == EXIT_LEFT else 0
        own_side = 0 if ps.exit_kind == EXIT_LEFT else 1
        z_from = linear_in_time(problem.z.column(src, src_side), dom, ps.exit_time)
        z_to = linear_in_time(problem.z.column(j, own_side), dom, ps.exit_time)
        a, p, q, c = problem.boundary.coefficients(problem, k, i, ps.exit_time, z_from, z_to)
        ps.extra.update(shock=k, src_sector=src, src_side=src_side, own_side=own_side,
                        bc_a=a, bc_p=p, bc_q=q, bc_c=c)


def with_data(problem, initial_left, initial_right, t0_states=None, source=None):
    """Copy of ``problem`` with new data that reuses its traced paths.

    Paths and boundary coefficients depend only on the frozen field and the
    curves, so problems differing in initial data or source share them.
    """
    paths = problem.paths()
    out = copy.copy(problem)
    out.initial_left = initial_left
    out.initial_right = initial_right
    out.t0_states = (np.asarray(t0_states, dtype=float) if t0_states is not None
                     else problem.t0_states)
    out.source = source
    shared = {}
    for key, ps in paths.items():
        extra = {k: v for k, v in ps.extra.items() if k not in ("source_data", "init_value")}
        new = replace(ps, extra=extra)
        j, i = key
        n = problem.n
        if source is not None and source.active:
            new.extra["source_data"] = source.prepare(out, j, new.node_t, new.node_sigma,
                                                      _node_stencil(new, problem.domain))
            if "frame_nodes" not in new.extra:
                frame_grid = problem.frame_left[j][:, :, i, :]
                new.extra["frame_nodes"] = np.broadcast_to(frame_grid[0, 0],
                                                           new.node_t.shape + (n,))
        if ps.exit_kind == EXIT_INITIAL:
            new.extra["init_value"] = _initial_value(out, new)
        shared[key] = new
    out._paths = shared
    return out


def _initial_value(problem, ps):
    dom = problem.domain
    z0 = bilinear(problem.z.values[ps.sector], dom, np.zeros_like(ps.exit_sigma), ps.exit_sigma)
    l0 = sm.eigen_decompose(problem.model, z0).left[:, ps.field, :]
    init = problem.initial_left if ps.sector == 0 else problem.initial_right
    return np.einsum("qc,qc->q", l0, init(ps.exit_xbar))


# ---------------------------------------------------------------------------
# operator T
# ---------------------------------------------------------------------------
def _path_source(problem, ps, iterate, context):
    """Integral of l_i . h(v) plus the Stieltjes frame term along each path."""
    dom = problem.domain
    total = np.zeros(ps.node_t.shape[0])
    has_src = problem.source is not None and problem.source.active
    if not (has_src or ps.extra["frame_varies"]):
        return total
    v = apply_stencil(iterate.values[ps.sector], _node_stencil(ps, dom))
    valid = ps.valid
    if has_src:
        h = problem.source.values(problem, context, ps.sector, ps.node_t, ps.node_sigma, v,
                                  ps.extra.get("source_data"))
        integrand = np.einsum("qkc,qkc->qk", ps.extra["frame_nodes"], h)
        integrand = np.where(valid, integrand, 0.0)
        total += np.sum(ps.extra["weights"] * integrand, axis=1)
    if ps.extra["frame_varies"]:
        L = ps.extra["frame_nodes"]
        # nodes run backward in time: integral over [t_exit, t] of (dl/ds) . v
        dl = L[:, :-1, :] - L[:, 1:, :]
        vm = 0.5 * (v[:, :-1, :] + v[:, 1:, :])
        seg_ok = valid[:, :-1] & valid[:, 1:]
        terms = np.where(seg_ok, np.einsum("qkc,qkc->qk", dl, vm), 0.0)
        total += np.sum(terms, axis=1)
    return total


def _stage_order(n):
    stages = [(0, i) for i in range(n)] + [(n, i) for i in range(n)]
    for j in range(1, n):
        stages += [(j, i) for i in range(j, n)]
    for j in range(n - 1, 0, -1):
        stages += [(j, i) for i in range(0, j)]
    return stages


def apply_operator_T(problem, iterate, context=None):
    """One application of the fixed-point operator; returns the new field."""
    dom = problem.domain
    n = problem.n
    paths = problem.paths()
    if context is None and problem.source is not None:
        context = problem.source.begin(problem, iterate)
    S = dom.n_sectors
    newchar = np.zeros((S, dom.M + 1, dom.P + 1, n))
    for j in range(1, n):
        newchar[j, 0] = problem.frame_left[j, 0] @ problem.t0_states[j]
    for (j, i) in _stage_order(n):
        ps = paths[(j, i)]
        if ps.exit_kind == EXIT_INITIAL:
            val = ps.extra["init_value"].copy()
        else:
            e = ps.extra
            col = newchar[e["src_sector"], :, 0 if e["src_side"] == 0 else -1, i]
            v = linear_in_time(col[:, None], dom, ps.exit_time)[:, 0]
            y_from = linear_in_time(iterate.column(e["src_sector"], e["src_side"]), dom,
                                    ps.exit_time)
            y_to = linear_in_time(iterate.column(j, e["own_side"]), dom, ps.exit_time)
            val = (e["bc_a"] * v + np.einsum("qc,qc->q", e["bc_p"], y_from)
                   + np.einsum("qc,qc->q", e["bc_q"], y_to) + e["bc_c"])
        val = val + _path_source(problem, ps, iterate, context)
        newchar[j, ps.m_idx, ps.p_idx, i] = val
    values = np.einsum("jmpci,jmpi->jmpc", problem.frame_right, newchar)
    for j in range(1, n):
        values[j, 0] = problem.t0_states[j]
    return PiecewiseField(dom, values)


def characteristic_source(problem, path_set, iterate):
    """Source integrals of a traced path set for the given iterate."""
    ctx = problem.source.begin(problem, iterate) if problem.source is not None else None
    if "weights" not in path_set.extra:
        _prepare_pathset(problem, path_set)
    return _path_source(problem, path_set, iterate, ctx)


@dataclass
class BroadResult:
    solution: PiecewiseField
    residuals: list
    iterations: int


def solve_broad(problem, initial_guess=None, tol=1e-10, max_iter=200):
    """Iterate T to its fixed point in the PC0 norm."""
    v = initial_guess
    if v is None:
        v = PiecewiseField.from_constants(problem.domain, problem.t0_states)
    residuals = []
    for it in range(1, max_iter + 1):
        w = apply_operator_T(problem, v)
        r = w.distance(v)
        residuals.append(r)
        v = w
        if r <= tol:
            return BroadResult(v, residuals, it)
        if len(residuals) >= 6:
            ratios = [residuals[-q] / max(residuals[-q - 1], 1e-300) for q in range(1, 6)]
            if min(ratios) > 0.95:
                raise NoContraction(
                    f"fixed-point residuals stagnate at {r:.3e} after {it} iterations")
    raise NoContraction(f"no convergence in {max_iter} iterations (residual {residuals[-1]:.3e})")


def residual_history_csv(residuals):
    lines = ["# columns: iter,pc0_residual"]
    lines += [f"{k + 1},{format(float(r), '.17g')}" for k, r in enumerate(residuals)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# a-priori PC0 bound
# ---------------------------------------------------------------------------
def pc0_bound_check(problem, solution):
    """(||ybar||_PC0, c0 exp(T c1)) with Gronwall-type constants.

    The bound is stated for the characteristic variables and converted to
    states by the maximal row sum of the right eigenvector matrices.
    """
    dom = problem.domain
    n = problem.n
    paths = problem.paths()
    Lmax = float(np.max(np.sum(np.abs(problem.frame_left), axis=-1)))
    Rmax = float(np.max(np.sum(np.abs(problem.frame_right), axis=-1)))
    LF1, F0 = 0.0, 0.0
    for ps in paths.values():
        if ps.exit_kind != EXIT_INITIAL:
            LF1 = max(LF1, float(np.max(np.abs(ps.extra["bc_a"]))))
            F0 = max(F0, float(np.max(np.abs(ps.extra["bc_c"]))))
    u_inf = 0.0
    xl = np.linspace(-dom.ell, 0.0, 4 * dom.P + 1)
    xr = np.linspace(0.0, dom.ell, 4 * dom.P + 1)
    u_inf = max(float(np.max(np.abs(problem.initial_left(xl)))),
                float(np.max(np.abs(problem.initial_right(xr)))))
    h0, Lh = 0.0, 0.0
    if problem.source is not None and problem.source.active:
        ctx0 = problem.source.begin(problem, PiecewiseField.zeros(dom, n))
        ctx1 = problem.source.begin(problem, solution)
        for j in range(dom.n_sectors):
            tt = np.repeat(dom.times[:, None], dom.P + 1, axis=1)
            ss = np.repeat(dom.sigmas[None, :], dom.M + 1, axis=0)
            data = problem.source.prepare(problem, j, tt, ss)
            zero = np.zeros((dom.M + 1, dom.P + 1, n))
            g0 = problem.source.values(problem, ctx0, j, tt, ss, zero, data)
            g1 = problem.source.values(problem, ctx1, j, tt, ss, solution.values[j], data)
            h0 = max(h0, float(np.max(np.abs(g0))))
            dv = np.max(np.abs(solution.values[j]), axis=-1)
            dg = np.max(np.abs(g1 - g0), axis=-1)
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = np.where(dv > 1e-14, dg / np.where(dv > 1e-14, dv, 1.0), 0.0)
            Lh = max(Lh, float(np.max(ratio)))
    Cdl = 0.0
    for j in range(dom.n_sectors):
        Lg = problem.frame_left[j]
        if dom.M >= 1:
            Cdl = max(Cdl, float(np.max(np.abs(np.diff(Lg, axis=0)))) / dom.dt * 2)
        if dom.P >= 1:
            Cdl = max(Cdl, float(np.max(np.abs(np.diff(Lg, axis=1)))) * dom.P
                      * dom.lambda_max * 4)
    geo = sum(LF1 ** k for k in range(n + 1))
    c0 = 2 * (dom.T * Lmax * h0 + F0 + Lmax * u_inf) * geo
    c1 = 2 * (Lmax * Lh + Cdl) * geo
    rhs = Rmax * c0 * np.exp(dom.T * c1)
    lhs = solution.pc0_norm()
    return lhs, float(rhs)
