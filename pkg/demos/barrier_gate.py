"""How far can S go before g0 - S beta(g0) stops dominating theta g0?

Bisection on the pointwise eigenvalue condition, then a look at the cutoff
profile used to conformally exhaust a non-compact chart.

    python demos/barrier_gate.py
"""
import math

import numpy as np

from hkflow.fixtures import get_fixture
from hkflow.gate import build_cutoff, conformal_exhaust, cutoff_property_check, sb_estimate

g0 = get_fixture("F3").metric(128)
# in 1-D the condition is pointwise: S <= (1 - theta) min g / beta
exact = 243 / (128 * math.pi**2)
print(f"{'theta':>8} {'S_max':>10} {'(1-theta) * 243/(128 pi^2)':>28}")
for theta in (1e-6, 0.1, 0.25, 0.5, 0.9):
    res = sb_estimate(g0, None, theta)
    print(f"{theta:8.1e} {res.S_max:10.5f} {(1 - theta) * exact:28.5f}")

flat = sb_estimate(get_fixture("F1").metric(32), None, 0.5)
print("flat torus:", flat.to_dict()["S_max"])

# a potential u with D D u = c beta shifts the threshold by exactly c
logdet = np.log(g0.values[:, 0, 0])
print(f"with u = -0.01 log det g0: S_max = {sb_estimate(g0, -0.01 * logdet, 0.5).S_max:.5f}")
# too large a shift breaks the condition already at S = 0 where beta < 0
print("with u = -0.05 log det g0: infeasible at S = 0:",
      sb_estimate(g0, -0.05 * logdet, 0.5).infeasible_at_zero)

prof = build_cutoff(0.1)
chk = cutoff_property_check(prof)
print(f"\ncutoff kappa=0.1: ramp on [{prof.a:.3f}, {prof.b:.3f}], "
      f"max psi' = {chk['psi_prime_max']:.1f} (bound {chk['psi_prime_bound']:.0f})")
for s in (0.5, 0.91, 0.915, 0.95, 0.99):
    print(f"  s={s:5.3f}  psi={float(prof.psi(s)):.4f}  F={float(prof.F(s)):.5f}")

# pushing rho0 out leaves less of the domain inside the ramp
flat_g = get_fixture("F1").metric(64)
x1, x2 = flat_g.grid.coords()
rho = (np.sin(np.pi * x1) ** 2 + np.sin(np.pi * x2) ** 2) / 2
for rho0 in (1.005, 1.02, 1.05, 1.08, 1.1):
    _, rep = conformal_exhaust(flat_g, rho, rho0, 0.1, prof)
    print(f"rho0={rho0:5.3f}  first-derivative inflation {rep['inflation_d1']:.3f}")
