"""Command line driver: ``grpcalc <subcommand> config.json``.

Subcommands: riemann | solve | sensitivity | gradient-check | convergence.
Exit codes: 0 success, 2 validation failure, 3 solver failure.
Outputs are written atomically and contain no timings, so equal configs give
byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import broad_solution as bs
from . import grp_solver as gs
from . import objective as ob
from . import reference_geometry as rg
from . import riemann_fan as rf
from . import sensitivity as se
from .config import load_config
from .errors import ConfigError, SolverError, ValidationError

SUBCOMMANDS = ("riemann", "solve", "sensitivity", "gradient-check", "convergence")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------
def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_to_builtin) + "\n"


def _to_builtin(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"not serializable: {type(v)}")


def _write(out_dir, name, text):
    rg.atomic_write_text(os.path.join(out_dir, name), text)


def _solve_task(args):
    model, domain, control, params, fan = args
    return gs.solve_grp(model, domain, control, params, nominal_fan=fan)


def solve_many(tasks, jobs):
    """Solve independent problems, in order, on up to ``jobs`` processes."""
    if jobs <= 1 or len(tasks) <= 1:
        return [_solve_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(_solve_task, tasks))


class Pipeline:
    """Objects shared by the subcommands for one configuration."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.control = cfg.control()
        self.model = cfg.model()
        uL, uR = self.control.nominal_pair()
        self.fan = rf.solve_riemann(self.model, uL, uR, tol=cfg.newton_tol)
        self.params = cfg.params()

    def domain(self, level=0):
        return self.cfg.domain(self.model, self.fan, level)

    def task(self, control=None, level=0):
        return (self.model, self.domain(level), control or self.control, self.params, self.fan)


def diagnostics_dict(sol):
    d = sol.diagnostics
    report = gs.entropy_and_rh_report(sol)
    return {
        "outer_residuals": d["outer_residuals"],
        "inner_iterations": d["inner_iterations"],
        "pc0_norm": d["pc0_norm"],
        "c_y": d["c_y"],
        "rh": [s["rh_max"] for s in report["shocks"]],
        "entropy": [s["margin_min"] for s in report["shocks"]],
        "rh_tol": report["rh_tol"],
        "passed": report["passed"],
        "nondegeneracy": d["nondegeneracy"],
        "derivative_boundary_residual": gs.derivative_boundary_residual(sol),
        "principal_part_error": gs.principal_part_errors(sol, [-1.5, 0.0, 1.5]).tolist(),
        "fan": sol.fan.to_dict(),
    }


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_riemann(cfg, jobs):
    pipe = Pipeline(cfg)
    text = _json(pipe.fan.to_dict())
    _write(cfg.out_dir, "riemann.json", text)
    sys.stdout.write(text)
    return 0


def write_solution(out_dir, sol):
    dom = sol.domain
    for j in range(dom.n_sectors):
        _write(out_dir, f"solution_sector{j}.csv", rg.field_csv_rows(dom, sol.curves, sol.ybar, [j]))
    _write(out_dir, "curves.csv", rg.curves_csv(dom, sol.curves))
    _write(out_dir, "diagnostics.json", _json(diagnostics_dict(sol)))


def cmd_solve(cfg, jobs):
    pipe = Pipeline(cfg)
    t0 = time.perf_counter()
    sol = _solve_task(pipe.task())
    write_solution(cfg.out_dir, sol)
    sys.stderr.write(f"solve: {time.perf_counter() - t0:.2f} s, outer residuals "
                     f"{sol.diagnostics['outer_residuals']}\n")
    return 0


def _sample_points(sol, t, n_points):
    a, b = sol.determinacy_interval(t)
    pos = sol.curves.shock_positions(t)
    g = se.guard_width(sol, t)
    # sample slightly more than needed and drop points in shock guard bands
    xs = np.linspace(a, b, 4 * n_points + 2)[1:-1]
    xs = xs[np.all(np.abs(xs[:, None] - pos[None, :]) > g, axis=1)] if pos.size else xs
    idx = np.linspace(0, xs.size - 1, n_points).round().astype(int)
    return xs[np.unique(idx)]


def rel_error(approx, ref, scale):
    """Max-norm error relative to max(|ref|_inf, scale)."""
    approx = np.asarray(approx, dtype=float)
    ref = np.asarray(ref, dtype=float)
    return float(np.max(np.abs(approx - ref)) / max(float(np.max(np.abs(ref))), scale))


def sensitivity_study(pipe, sol, variations, t_query, epsilons, n_points, jobs):
    """Tangent quantities and central-FD comparisons for each variation."""
    solver = se.SensitivitySolver(sol)
    tasks = []
    for _, v in variations:
        for e in epsilons:
            tasks += [pipe.task(se.perturb_control(pipe.control, v, e)),
                      pipe.task(se.perturb_control(pipe.control, v, -e))]
    perturbed = solve_many(tasks, jobs)
    results = []
    q = 0
    for name, v in variations:
        bundle = solver.solve(v)
        norm = v.norm(pipe.cfg.ell, pipe.cfg.eps)
        entry = {"name": name, "norm_U": norm, "bundle": bundle, "fd": []}
        for e in epsilons:
            sp, sm_ = perturbed[q], perturbed[q + 1]
            q += 2
            rows = []
            for t in t_query:
                xs = _sample_points(sol, t, n_points)
                tg = se.physical_sensitivity(sol, bundle, t, xs)
                fd = (gs.sample_physical(sp, t, xs) - gs.sample_physical(sm_, t, xs)) / (2 * e)
                dxi_fd = (sp.curves.shock_positions(t) - sm_.curves.shock_positions(t)) / (2 * e)
                dxi = bundle.dxi_at(t)
                rows.append({
                    "t": t, "x": xs, "dy_tangent": tg, "dy_fd": fd,
                    "dy_rel_err": rel_error(tg, fd, 1e-3 * norm),
                    "dxi_tangent": dxi, "dxi_fd": dxi_fd,
                    "dxi_err": (np.abs(dxi - dxi_fd) / np.maximum(1.0, np.abs(dxi_fd))).tolist(),
                })
            entry["fd"].append({"epsilon": e, "times": rows})
        results.append(entry)
    return results


def cmd_sensitivity(cfg, jobs):
    pipe = Pipeline(cfg)
    sol = _solve_task(pipe.task())
    variations = cfg.variations()
    if not variations:
        raise ConfigError("/sensitivity/variations", "at least one variation is required")
    t_query = cfg.sensitivity.get("t_query", [cfg.T])
    for t in t_query:
        if t > cfg.T:
            raise ConfigError("/sensitivity/t_query", f"query time {t} exceeds T")
    epsilons = cfg.sensitivity.get("epsilons", [1e-4])
    n_points = cfg.sensitivity.get("n_points", 20)
    results = sensitivity_study(pipe, sol, variations, t_query, epsilons, n_points, jobs)
    report = []
    dom = sol.domain
    atom_lines = ["# columns: variation,t,shock,x,dxi," +
                  ",".join(f"weight_{c + 1}" for c in range(dom.n))]
    for entry in results:
        name, bundle = entry["name"], entry["bundle"]
        lines = ["# columns: t,x," + ",".join(f"dy_{c + 1}" for c in range(dom.n))]
        for t in t_query:
            xs = _sample_points(sol, t, n_points)
            dy = se.physical_sensitivity(sol, bundle, t, xs)
            for x, row in zip(xs, dy):
                lines.append(f"{rg.fmt(t)},{rg.fmt(x)}," + ",".join(rg.fmt(v) for v in row))
            md = se.measure_derivative(sol, bundle, t)
            for k, ((xk, wk), d) in enumerate(zip(md.atoms, bundle.dxi_at(t))):
                atom_lines.append(f"{name},{rg.fmt(t)},{k},{rg.fmt(xk)},{rg.fmt(d)},"
                                  + ",".join(rg.fmt(v) for v in wk))
        _write(cfg.out_dir, f"sensitivity_{name}_dy.csv", "\n".join(lines) + "\n")
        xi_lines = ["# columns: t," + ",".join(f"dxi_{k}" for k in range(dom.n))]
        for m, t in enumerate(dom.times):
            xi_lines.append(rg.fmt(t) + "," + ",".join(rg.fmt(d[m]) for d in bundle.dxi))
        _write(cfg.out_dir, f"sensitivity_{name}_dxi.csv", "\n".join(xi_lines) + "\n")
        report.append({"name": name, "norm_U": entry["norm_U"], "fd": [
            {"epsilon": f["epsilon"], "times": [
                {k: r[k] for k in ("t", "dy_rel_err", "dxi_tangent", "dxi_fd", "dxi_err")}
                for r in f["times"]]} for f in entry["fd"]]})
    _write(cfg.out_dir, "sensitivity_atoms.csv", "\n".join(atom_lines) + "\n")
    _write(cfg.out_dir, "sensitivity_fd.json", _json(report))
    return 0


def cmd_gradient_check(cfg, jobs):
    pipe = Pipeline(cfg)
    if not cfg.objective:
        raise ConfigError("/objective", "gradient-check needs an objective section")
    sol = _solve_task(pipe.task())
    obj = cfg.tracking_objective()
    variations = cfg.variations()
    if not variations:
        raise ConfigError("/sensitivity/variations", "at least one variation is required")
    epsilons = cfg.objective.get("epsilons", [1e-4])
    solver = se.SensitivitySolver(sol)
    tasks = []
    for _, v in variations:
        for e in epsilons:
            tasks += [pipe.task(se.perturb_control(pipe.control, v, e)),
                      pipe.task(se.perturb_control(pipe.control, v, -e))]
    perturbed = solve_many(tasks, jobs)
    J = ob.evaluate(obj, sol)
    out = {"J": J, "directions": []}
    q = 0
    for name, v in variations:
        g = ob.gradient(obj, sol, v, solver=solver)
        fds = {}
        errs = {}
        for e in epsilons:
            fd = (ob.evaluate(obj, perturbed[q]) - ob.evaluate(obj, perturbed[q + 1])) / (2 * e)
            q += 2
            fds[repr(e)] = fd
            errs[repr(e)] = abs(g - fd) / max(1.0, abs(g))
        out["directions"].append({"name": name, "dJ_tangent": g, "dJ_fd": fds, "rel_err": errs})
    _write(cfg.out_dir, "gradient_check.json", _json(out))
    return 0


def exact_solution_values(sol):
    """Closed-form node values when available (else None).

    * constant-coefficient systems without source: characteristic transport,
    * piecewise-constant data without source: the Riemann fan states.
    """
    model, dom, ctrl = sol.model, sol.domain, sol.control
    if model.has_source:
        return None
    ul, ur = gs.dilate_initial(ctrl)
    xs = np.linspace(-dom.ell, dom.ell, 41)
    const_data = (np.max(np.abs(ctrl.u_l.derivative(xs))) == 0
                  and np.max(np.abs(ctrl.u_r.derivative(xs))) == 0)
    values = np.empty_like(sol.ybar.values)
    if const_data and model.name != "linear_diag":
        for j in range(dom.n_sectors):
            values[j] = sol.fan.states[j]
        return values
    if model.name != "linear_diag":
        return None
    eig = gs.sm.eigen_decompose(model, np.zeros(dom.n))
    for j in range(dom.n_sectors):
        t = dom.times[:, None]
        x = rg.physical_from_sigma(dom, sol.curves, j, t, dom.sigmas[None, :])
        y = np.zeros(x.shape + (dom.n,))
        for i in range(dom.n):
            foot = x - eig.lambdas[i] * t
            piece = ctrl.u_l if j <= i else ctrl.u_r
            y += np.einsum("mp,c->mpc", np.einsum("mpc,c->mp", piece(foot), eig.left[i]),
                           eig.right[:, i])
        values[j] = y
    return values


def convergence_study(cfg, levels, jobs=1):
    """Solve on (M, P) * 2^k, k < levels; self-convergence and true errors."""
    if levels < 3:
        raise ConfigError("/convergence/levels", "a convergence study needs at least 3 levels")
    pipe = Pipeline(cfg)
    tasks = [pipe.task(level=k) for k in range(levels)]
    try:
        sols = solve_many(tasks, jobs)
    except (SolverError, ValidationError) as exc:
        raise type(exc)(f"convergence study: {exc}") from exc
    rows = []
    for k, sol in enumerate(sols):
        row = {"level": k, "M": sol.domain.M, "P": sol.domain.P,
               "h": max(sol.domain.dt, 1.0 / sol.domain.P),
               "self_error": float("nan"), "self_order": float("nan"),
               "true_error": float("nan"), "true_order": float("nan")}
        if k + 1 < len(sols):
            fine = sols[k + 1].ybar.values[:, ::2, ::2]
            row["self_error"] = float(np.max(np.abs(sol.ybar.values - fine)))
        ex = exact_solution_values(sol)
        if ex is not None:
            row["true_error"] = float(np.max(np.abs(sol.ybar.values - ex)))
        rows.append(row)
    for k in range(1, len(rows)):
        for key, okey in (("self_error", "self_order"), ("true_error", "true_order")):
            a, b = rows[k - 1][key], rows[k][key]
            if np.isfinite(a) and np.isfinite(b) and a > 1e-13 and b > 1e-13:
                rows[k][okey] = float(np.log2(a / b))
    return rows


def convergence_csv(rows):
    cols = ["level", "M", "P", "h", "self_error", "self_order", "true_error", "true_order"]
    lines = ["# columns: " + ",".join(cols)]
    for r in rows:
        lines.append(",".join(str(r[c]) if c in ("level", "M", "P") else rg.fmt(r[c])
                              for c in cols))
    return "\n".join(lines) + "\n"


def cmd_convergence(cfg, jobs):
    levels = cfg.convergence.get("levels", 3)
    rows = convergence_study(cfg, levels, jobs)
    _write(cfg.out_dir, "convergence.csv", convergence_csv(rows))
    return 0


COMMANDS = {"riemann": cmd_riemann, "solve": cmd_solve, "sensitivity": cmd_sensitivity,
            "gradient-check": cmd_gradient_check, "convergence": cmd_convergence}


def build_parser():
    p = argparse.ArgumentParser(prog="grpcalc", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("config", help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--grid-m", type=int, help="override grid.M")
    p.add_argument("--grid-p", type=int, help="override grid.P")
    p.add_argument("--tol", type=float, help="override tolerances.outer_tol")
    p.add_argument("--levels", type=int, help="override convergence.levels")
    p.add_argument("--jobs", type=int, default=int(os.environ.get("GRPCALC_JOBS", "1")),
                   help="worker processes for independent solves (default $GRPCALC_JOBS or 1)")
    return p


def run(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.out:
        overrides["/output/directory"] = args.out
    if args.grid_m:
        overrides["/grid/M"] = args.grid_m
    if args.grid_p:
        overrides["/grid/P"] = args.grid_p
    if args.tol:
        overrides["/tolerances/outer_tol"] = args.tol
    if args.levels is not None:
        overrides["/convergence/levels"] = args.levels
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.subcommand](cfg, max(1, args.jobs))
    except ConfigError as exc:
        sys.stderr.write(f"configuration error at {exc.pointer or '/'}: {exc}\n")
        return 2
    except ValidationError as exc:
        sys.stderr.write(f"validation error: {exc}\n")
        return 2
    except SolverError as exc:
        sys.stderr.write(f"solver error: {exc}\n")
        return 3


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
