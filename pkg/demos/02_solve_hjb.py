"""Solve the limiting control problem on a grid and look at the answer.

The solver alternates between evaluating a fixed policy (a sparse linear
solve) and improving it node by node. Afterwards we check the pointwise
equation defect, the effect of doubling the box, and print a coarse map
of the optimal queue split.
"""

import time

import numpy as np

from qedsched.costs import power_queue
from qedsched.hjb import GridSpec, domain_doubling_gap, extract_policy_fn, residual_report, solve_hjb, value_fn
from qedsched.params import LimitParams, diffusion_coeffs

limits = LimitParams(lam=[0.5, 0.5], mu=[1.0, 1.0], theta=[0.5, 2.0], lam_hat=[0.0, 0.0], mu_hat=[1.0, 1.0],
                     c2u=[1.0, 1.0], gamma=1.0)
coeffs = diffusion_coeffs(limits)
cost = power_queue([1.0, 1.0], 2)
grid = GridSpec(box_halfwidth=5.0, points_per_axis=81)

t0 = time.perf_counter()
vg = solve_hjb(grid, cost, coeffs, limits)
print(f"solved in {time.perf_counter() - t0:.2f}s, {vg.iterations} policy sweeps")
for i, (delta, rise) in enumerate(vg.history, 1):
    print(f"  sweep {i}: max change {delta:.2e}, max increase {rise:.2e}")

rep = residual_report(vg, cost, coeffs, limits)
print(f"interior defect: max {rep.max_interior_residual:.2e}, fraction below 1e-2 {rep.interior_fraction:.3f}")
print(f"doubling the box moves inner values by {domain_doubling_gap(vg, cost, coeffs, limits):.2e}")

V = value_fn(vg)
for x in ((0.5, 0.5), (0.0, 0.0), (-1.0, 0.5), (2.0, 0.0)):
    print(f"V{x} = {V(np.array(x)):.5f}")

# Share of the queue given to class 1, on a coarse window. Class 2 abandons
# faster, so pushing its customers into the queue is cheap: they leave.
h = extract_policy_fn(vg)
ticks = np.linspace(-1, 3, 9)
print("\nu_1(x) for x1 (rows) and x2 (columns); '.' where nobody waits")
print("       " + " ".join(f"{t:5.1f}" for t in ticks))
for a in ticks:
    row = []
    for b in ticks:
        row.append("    ." if a + b <= 0 else f"{h.point([a, b])[0]:5.2f}")
    print(f"{a:5.1f}  " + " ".join(row))
