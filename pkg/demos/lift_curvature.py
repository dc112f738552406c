"""Lift a Hessian metric to the tangent bundle and compare curvatures.

The Kahler curvature of the lift and minus half of the Hessian curvature Q
are computed with different stencils, so they differ at O(h^2).  Halving h
should cut the gap by four.

    python demos/lift_curvature.py
"""
import numpy as np

from hkflow.fixtures import get_fixture
from hkflow.geometry import beta_tensor, hessian_curvature
from hkflow.tangent_lift import bisectional_sign_scan, kahler_curvature, kahler_ricci, lift_metric

for fid in ("F3", "F5"):
    print(f"-- {fid}")
    prev = None
    for N in (16, 32, 64, 128):
        hs = get_fixture(fid).structure(N)
        lift = lift_metric(hs.metric)
        _, defect = kahler_curvature(lift, hs)
        ric = kahler_ricci(lift).values
        quarter = np.max(np.abs(ric - beta_tensor(hs.metric).values / 4))
        order = "" if prev is None else f"order {np.log2(prev / defect):.3f}"
        print(f"N={N:4d}  |R + Q/2| = {defect:.3e}  |Ric - beta/4| = {quarter:.1e}  {order}")
        prev = defect

# sign of the Hessian sectional curvature, sampled over random frames
hs = get_fixture("F3").structure(64)
print("\nmin -Q(e,e,e,e) on F3:", round(bisectional_sign_scan(hessian_curvature(hs), hs.metric), 4))
print("(negative, so this metric is not nonnegatively curved)")
jet = get_fixture("F2").jet(np.linspace(-3, 3, 61))
print("same scan on the exponential potential:", bisectional_sign_scan(hessian_curvature(jet), jet.phi2))
