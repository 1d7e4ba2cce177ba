"""Tangent-vs-finite-difference checks for every variation of a config.

Reports pointwise sensitivity errors, shock-derivative errors, the L1 shift
remainder ratio and (if the config has an objective) gradient errors.

    python scripts/fd_checks.py configs/perturbed.json --grid 32
"""

import argparse

from grpcalc import objective as ob
from grpcalc import sensitivity as se
from grpcalc.cli import Pipeline, sensitivity_study, solve_many
from grpcalc.config import load_config

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("config")
parser.add_argument("--grid", type=int, help="grid size M = P")
parser.add_argument("--eps", type=float, default=1e-4)
args = parser.parse_args()

overrides = {"/grid/M": args.grid, "/grid/P": args.grid} if args.grid else {}
cfg = load_config(args.config, overrides)
pipe = Pipeline(cfg)
sol = solve_many([pipe.task()], 1)[0]
T = cfg.T
variations = cfg.variations()
results = sensitivity_study(pipe, sol, variations, [T], [args.eps], 20, 1)

print(f"{'variation':>12} {'dy rel err':>11} {'dxi err':>9} {'remainder ratio':>16}")
for (name, v), entry in zip(variations, results):
    row = entry["fd"][0]["times"][0]
    rem = []
    for e in (1e-2, 5e-3):
        pert = solve_many([pipe.task(se.perturb_control(pipe.control, v, e))], 1)[0]
        rem.append(se.shift_remainder_l1(sol, entry["bundle"], pert, e, T))
    ratio = rem[1] / rem[0] if rem[0] > 1e-14 else float("nan")
    print(f"{name:>12} {row['dy_rel_err']:11.2e} {max(row['dxi_err']):9.2e} {ratio:16.3f}")

if cfg.objective:
    obj = cfg.tracking_objective()
    solver = se.SensitivitySolver(sol)
    print(f"\nJ = {ob.evaluate(obj, sol):.10g}")
    for name, v in variations:
        g = ob.gradient(obj, sol, v, solver=solver)
        jp, jm = (ob.evaluate(obj, solve_many([pipe.task(se.perturb_control(pipe.control, v, s * args.eps))], 1)[0])
                  for s in (1, -1))
        fd = (jp - jm) / (2 * args.eps)
        print(f"{name:>12} dJ {g: .8e}  FD {fd: .8e}  rel {abs(g - fd) / max(1, abs(g)):.1e}")
