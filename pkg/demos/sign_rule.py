"""Consistency of the multi-time equations for all eight statistics assignments.

For each (eps_x, eps_xbar, eps_y) prints the y-y commutator residual on random
spacelike probes, the numerical budget, and the verdict of the sign rule
(consistent iff the product of the signs is +1).

    python3 demos/sign_rule.py
"""

from multitime import consistency as cons
from multitime import make_params

report = cons.consistency_report(make_params(L=12, lam=0.5), seed=0)
print(f"{'eps':>12} {'residual':>10} {'budget':>10} {'ratio':>10}  verdict")
for row in report["assignments"]:
    eps = "".join("+" if e > 0 else "-" for e in row["eps"])
    verdict = "consistent" if row["verdict"] else "inconsistent"
    print(f"{eps:>12} {row['residual']:10.2e} {row['budget']:10.2e} {row['ratio']:10.2e}  {verdict}")
print(f"verdict agrees with measurement for all rows: {report['agrees']}")
