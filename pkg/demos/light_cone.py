"""Spacelike leakage of the lattice Green function and of the x-y commutator.

The centered-difference Dirac operator has no strict light cone, so both
quantities decay with the distance outside it instead of vanishing.

    python3 demos/light_cone.py
"""

from multitime import compute_green, make_params, spacelike_residual
from multitime import consistency as cons

params = make_params(L=64)
table = compute_green(params, 8.0, "G")
scan = cons.margin_scan(params, seed=0, margins=(2.0, 4.0, 6.0))
print("margin   G tail     x-y        xbar-y")
for m, xy, xby in zip(scan["margins"], scan["xy"], scan["xbary"]):
    print(f"{m:6.1f}  {spacelike_residual(table, m):.2e}  {xy:.2e}  {xby:.2e}")
