"""The guarantees behind the algorithms, recomputed from their closed forms.

Run: python3 demos/01_constants.py
"""

import numpy as np

from stochmatch import analysis as an

print("Balance SWOR ratio integral   ", an.gamma_balance())
print("Stochastic SWOR, theta=0.4254 ", an.gamma_swor(0.4254))
print("edge-weighted, theta=1/2      ", an.gamma_half())

# The ratio as a function of theta peaks near the default.
thetas = np.linspace(0.2, 0.5, 13)
best = max(thetas, key=an.gamma_swor)
for th in thetas:
    mark = "  <- best on this grid" if th == best else ""
    print(f"  theta={th:.3f}  Gamma={an.gamma_swor(th):.5f}{mark}")

# q(y) bounds the chance a vertex at water level y is still unmatched.
for y in (0.0, 0.5, 1.0, 1.5, 2.0, 3.0):
    print(f"  q({y}) = {an.q(y):.5f}")

print()
for r in an.verify_all():
    print(f"{'PASS' if r.passed else 'FAIL'} {r.check:22s} {r.grid} max_violation={r.max_violation:.3g}")
