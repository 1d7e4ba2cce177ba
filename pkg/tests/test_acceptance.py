"""Acceptance criteria 1-12; each test prints one PASS/FAIL line."""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from grpcalc import cli
from grpcalc import grp_solver as gs
from grpcalc import objective as ob
from grpcalc import riemann_fan as rf
from grpcalc import sensitivity as se
from grpcalc import system_model as sm
from grpcalc.config import load_config

from conftest import (ACCEPTANCE_LINES, ELL, EPS, T, UL, UR, Setup,
                      baseline_control, burgers_model, linear_transport_exact,
                      variations)

ROOT = Path(__file__).resolve().parents[1]
P = rf.PolynomialPiece


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def off_shock_points(sol, n=20):
    """n points of I_T outside the shock guard bands."""
    return cli._sample_points(sol, T, n)


def fd_study(setup, eps=1e-4):
    """Tangent and central-FD data for the three standard variations."""
    sol = setup.solution
    solver = se.SensitivitySolver(sol)
    xs = off_shock_points(sol)
    out = {}
    for name, v in variations().items():
        bundle = solver.solve(v)
        sp = setup.solve(se.perturb_control(setup.control, v, eps))
        sm_ = setup.solve(se.perturb_control(setup.control, v, -eps))
        fd = (gs.sample_physical(sp, T, xs) - gs.sample_physical(sm_, T, xs)) / (2 * eps)
        tg = se.physical_sensitivity(sol, bundle, T, xs)
        dxi_fd = (sp.shock_positions(T) - sm_.shock_positions(T)) / (2 * eps)
        out[name] = {"bundle": bundle, "x": xs, "dy": tg, "dy_fd": fd,
                     "dy_err": cli.rel_error(tg, fd, 1e-3 * v.norm(ELL, EPS)),
                     "dxi": bundle.dxi_at(T), "dxi_fd": dxi_fd}
    return out


@pytest.fixture(scope="module")
def studies(baseline, perturbed):
    t0 = time.perf_counter()
    base = fd_study(baseline)
    elapsed = time.perf_counter() - t0
    return {"baseline": base, "perturbed": fd_study(perturbed), "baseline_runtime": elapsed}


# ---------------------------------------------------------------------------
def test_criterion_01_riemann_oracle():
    model = burgers_model()
    t0 = time.perf_counter()
    fan = rf.solve_riemann(model, UL, UR)
    elapsed = time.perf_counter() - t0
    err = max(np.abs(fan.sigma - [-0.4, -0.2]).max(), np.abs(fan.speeds - [-1, 1]).max(),
              np.abs(fan.states[1] - [-0.2, 0.1]).max())
    lin = sm.builtin_model("linear_diag", {})
    uL, uR = np.array([0.3, -0.1]), np.array([-0.2, 0.25])
    lfan = rf.solve_riemann(lin, uL, uR)
    lerr = np.abs(lfan.sigma - sm.eigen_decompose(lin, uL).left @ (uR - uL)).max()
    resid = max(fan.residual, fan.rh_residuals.max())
    ok = err <= 1e-10 and lerr <= 1e-10 and resid <= 1e-10 and elapsed < 0.1
    report(1, ok, f"burgers err {err:.1e}, residual {resid:.1e}, linear err {lerr:.1e}, "
                  f"runtime {elapsed * 1e3:.1f} ms")


def test_criterion_02_constant_fan_exactness():
    setup = Setup(burgers_model(), baseline_control(), 64, params=gs.SolverParams())
    t0 = time.perf_counter()
    sol = setup.solve()
    elapsed = time.perf_counter() - t0
    res = sol.diagnostics["outer_residuals"]
    exact = np.stack([np.broadcast_to(sol.fan.states[j], sol.ybar.values[j].shape)
                      for j in range(3)])
    pc0 = np.abs(sol.ybar.values - exact).max()
    times = setup.domain.times
    xi = max(np.abs(c.positions() - s * times).max()
             for c, s in zip(sol.curves.shocks, sol.fan.speeds))
    ok = res[-1] <= 1e-8 and len(res) <= 3 and pc0 <= 1e-9 and xi <= 1e-9 and elapsed < 5
    report(2, ok, f"{len(res)} outer iterations (last {res[-1]:.1e}), PC0 error {pc0:.1e}, "
                  f"shock error {xi:.1e}, runtime {elapsed:.2f} s")


def test_criterion_03_linear_transport(linear_cubic_control):
    cfg = load_config(ROOT / "configs" / "linear_transport.json", {"/grid/M": 16, "/grid/P": 16})
    t0 = time.perf_counter()
    rows = cli.convergence_study(cfg, 3)
    elapsed = time.perf_counter() - t0
    # independent check of the finest level against the closed form in physical space
    model = sm.builtin_model("linear_diag", {})
    fine = Setup(model, linear_cubic_control, 64, params=gs.SolverParams())
    sol = fine.solve()
    xs = np.linspace(-ELL + T, ELL - T, 801)
    keep = np.abs(xs[:, None] - sol.shock_positions(T)[None]).min(axis=1) > 1e-9
    phys = np.abs(gs.sample_physical(sol, T, xs[keep]) - linear_transport_exact(
        linear_cubic_control, T, xs[keep])).max()
    err64 = rows[2]["true_error"]
    orders = [rows[1]["true_order"], rows[2]["true_order"]]
    ok = err64 <= 5e-3 and phys <= 5e-3 and min(orders) >= 0.9 and elapsed < 30
    report(3, ok, f"PC0 error at 64: {err64:.2e} (physical samples {phys:.2e}), "
                  f"orders {orders[0]:.2f}, {orders[1]:.2f}, runtime {elapsed:.1f} s")


def test_criterion_04_rh_entropy(baseline, perturbed):
    lines = []
    ok = True
    for name, s in (("baseline", baseline), ("perturbed", perturbed)):
        rep = gs.entropy_and_rh_report(s.solution)
        h = s.solution.grid_h()
        good = rep["margin_min"] >= -1e-8 and rep["rh_max"] <= 5 * h
        ok &= good
        lines.append(f"{name}: min margin {rep['margin_min']:.3g}, max RH {rep['rh_max']:.1e} "
                     f"(limit {5 * h:.1e})")
    report(4, ok, "; ".join(lines))


def test_criterion_05_principal_part(baseline, perturbed):
    ok = True
    parts = []
    for name, s in (("baseline", baseline), ("perturbed", perturbed)):
        err = gs.principal_part_errors(s.solution, [-1.5, 0.0, 1.5])
        C = err.max() / s.domain.dt
        ok &= C <= 5
        parts.append(f"{name}: max error {err.max():.2e} = {C:.2f} dt")
    report(5, ok, "; ".join(parts))


def test_criterion_06_tangent_vs_fd(studies):
    errs = {f"{p}/{n}": d["dy_err"] for p in ("baseline", "perturbed")
            for n, d in studies[p].items()}
    runtime = studies["baseline_runtime"]
    n_points = min(d["x"].size for p in ("baseline", "perturbed") for d in studies[p].values())
    ok = max(errs.values()) <= 1e-2 and runtime < 120 and n_points == 20
    report(6, ok, "max relative errors " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
                  + f"; baseline runtime {runtime:.1f} s")


def test_criterion_07_shock_derivative(studies):
    worst = 0.0
    for p in ("baseline", "perturbed"):
        for d in studies[p].values():
            worst = max(worst, float(np.max(np.abs(d["dxi"] - d["dxi_fd"])
                                            / np.maximum(1.0, np.abs(d["dxi_fd"])))))
    exact = float(np.abs(studies["baseline"]["shift_x0"]["dxi"] - 1.0).max())
    ok = worst <= 1e-2 and exact <= 1e-9
    report(7, ok, f"max shock-derivative error {worst:.1e}; pure shift |dxi - 1| = {exact:.1e}")


def test_criterion_08_shift_remainder(baseline, studies):
    v = variations()["poly_r"]
    bundle = studies["baseline"]["poly_r"]["bundle"]
    rem = {}
    for e in (1e-2, 5e-3):
        pert = baseline.solve(se.perturb_control(baseline.control, v, e))
        rem[e] = se.shift_remainder_l1(baseline.solution, bundle, pert, e, T)
    ratio = rem[5e-3] / rem[1e-2]
    norm = v.norm(ELL, EPS)
    lips = []
    for e in (1e-2, 1e-3, 1e-4):
        pert = baseline.solve(se.perturb_control(baseline.control, v, e))
        lips.append(se.l1_distance(pert, baseline.solution, T) / (e * norm))
    spread = max(lips) / min(lips)
    ok = ratio <= 0.7 and spread <= 2.0
    report(8, ok, f"remainders {rem[1e-2]:.2e} -> {rem[5e-3]:.2e} (ratio {ratio:.3f}); "
                  f"Lipschitz ratios {', '.join(f'{q:.4f}' for q in lips)} (spread {spread:.3f})")


def test_criterion_09_objective_gradient(baseline):
    cfg = load_config(ROOT / "configs" / "baseline.json")
    obj = cfg.tracking_objective()
    assert (obj.a, obj.b) == (-0.5, 0.5) and obj.target.jumps().size == 0
    sol = baseline.solution
    solver = se.SensitivitySolver(sol)
    eps = 1e-4
    errs = []
    grads = {}
    for name, v in variations().items():
        g = ob.gradient(obj, sol, v, solver=solver)
        jp = ob.evaluate(obj, baseline.solve(se.perturb_control(baseline.control, v, eps)))
        jm = ob.evaluate(obj, baseline.solve(se.perturb_control(baseline.control, v, -eps)))
        fd = (jp - jm) / (2 * eps)
        grads[name] = g
        errs.append(abs(g - fd) / max(1.0, abs(g)))
    v = variations()
    combo = v["bump_l"].combine(2.0, v["poly_r"], -0.5).combine(1.0, v["shift_x0"], 3.0)
    g_combo = ob.gradient(obj, sol, combo, solver=solver)
    lin = abs(g_combo - (2.0 * grads["bump_l"] - 0.5 * grads["poly_r"] + 3.0 * grads["shift_x0"]))
    ok = max(errs) <= 1e-2 and lin <= 1e-9
    report(9, ok, f"gradient vs FD relative errors {', '.join(f'{e:.1e}' for e in errs)}; "
                  f"superposition error {lin:.1e}")


def test_criterion_10_measure_pairing(perturbed, studies):
    phi = lambda x: np.stack([np.cos(x), np.sin(x)], axis=-1)
    sol = perturbed.solution
    eps = 1e-4
    errs = []
    for name, v in variations().items():
        md = se.measure_derivative(sol, studies["perturbed"][name]["bundle"], T)
        paired = md.pair(phi)
        jp = se.weak_pairing(perturbed.solve(se.perturb_control(perturbed.control, v, eps)), phi, T,
                             md.interval)
        jm = se.weak_pairing(perturbed.solve(se.perturb_control(perturbed.control, v, -eps)), phi, T,
                             md.interval)
        fd = (jp - jm) / (2 * eps)
        errs.append(abs(paired - fd) / max(abs(fd), 1e-12))
    report(10, max(errs) <= 1e-2,
           "relative pairing errors " + ", ".join(f"{e:.1e}" for e in errs))


def shifted_solve(setup, c):
    """Solve for y - c with the shifted model and data, then add c back."""
    model = sm.shift_system(setup.model, c)
    ctl = setup.control
    shift = lambda piece: rf.combine_pieces(1.0, piece, -1.0, P.constant(c))
    uL, uR = ctl.nominal_pair()
    control = rf.Control(shift(ctl.u_l), shift(ctl.u_r), ctl.x0, ctl.M0, ctl.M1, ctl.eps, ctl.ell,
                         nominal=(tuple(np.asarray(uL) - c), tuple(np.asarray(uR) - c)))
    s = Setup(model, control, setup.domain.M, setup.params)
    sol = s.solve()
    return sol.ybar.values + c, sol


def test_criterion_11_shift_equivalence(baseline, perturbed):
    c = np.array([0.05, -0.03])
    errs = []
    for s in (baseline, perturbed):
        values, sol = shifted_solve(s, c)
        errs.append(float(np.abs(values - s.solution.ybar.values).max()))
        errs.append(float(np.abs(sol.shock_positions(T) - s.solution.shock_positions(T)).max()))
    report(11, max(errs) <= 1e-8,
           f"PC0 differences baseline {errs[0]:.1e}, perturbed {errs[2]:.1e}; "
           f"shock differences {errs[1]:.1e}, {errs[3]:.1e}")


def test_criterion_12_determinism(tmp_path):
    same = []
    for name in ("baseline", "perturbed"):
        outs = []
        for run in range(2):
            out = tmp_path / f"{name}{run}"
            subprocess.run([sys.executable, "-m", "grpcalc", "solve",
                            str(ROOT / "configs" / f"{name}.json"), "--out", str(out)],
                           check=True, capture_output=True)
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        same.append(outs[0] == outs[1] and len(outs[0]) == 5)
    report(12, all(same), f"byte-identical outputs: baseline {same[0]}, perturbed {same[1]}")
