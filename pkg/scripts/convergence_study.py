"""Grid-refinement study: self-convergence and errors against closed forms.

    python scripts/convergence_study.py configs/linear_transport.json --levels 4
"""

import argparse

from grpcalc.cli import convergence_csv, convergence_study
from grpcalc.config import load_config

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("config")
parser.add_argument("--levels", type=int, default=4)
parser.add_argument("--grid", type=int, help="base grid size M = P")
args = parser.parse_args()

overrides = {"/grid/M": args.grid, "/grid/P": args.grid} if args.grid else {}
rows = convergence_study(load_config(args.config, overrides), args.levels)
print(convergence_csv(rows), end="")
