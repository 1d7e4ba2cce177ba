"""Solve one configuration and print shock paths and admissibility diagnostics.

    python scripts/shock_tracking_demo.py configs/p_system.json
"""

import argparse

import numpy as np

from grpcalc import grp_solver as gs
from grpcalc.cli import Pipeline, solve_many
from grpcalc.config import load_config

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("config")
parser.add_argument("--grid", type=int, help="grid size M = P")
args = parser.parse_args()

overrides = {"/grid/M": args.grid, "/grid/P": args.grid} if args.grid else {}
cfg = load_config(args.config, overrides)
sol = solve_many([Pipeline(cfg).task()], 1)[0]
d = sol.diagnostics
print(f"outer residuals: {', '.join(f'{r:.2e}' for r in d['outer_residuals'])}")
print(f"Riemann fan speeds: {sol.fan.speeds}, strengths: {sol.fan.sigma}")
rep = gs.entropy_and_rh_report(sol)
print(f"max RH residual {rep['rh_max']:.2e} (tolerance {rep['rh_tol']:.2e}), "
      f"min Lax margin {rep['margin_min']:.3g}")
print(f"principal part errors at t = dt: {gs.principal_part_errors(sol, [-1.5, 0.0, 1.5])}")
print("\n     t " + "".join(f"  shock {k:>2}" for k in range(sol.domain.n)))
for t in np.linspace(0, cfg.T, 6):
    print(f"{t:6.3f} " + "".join(f"{x:10.6f}" for x in sol.shock_positions(t)))
a, b = sol.determinacy_interval(cfg.T)
xs = np.linspace(a, b, 9)
print("\n     x   y(T, x)")
for x, y in zip(xs, gs.sample_physical(sol, cfg.T, xs)):
    print(f"{x:6.3f}   " + "  ".join(f"{v: .6f}" for v in y))
