"""Build a two-class system, scale it up, and evaluate a few running costs.

Run with ``python demos/01_model_and_costs.py``.
"""

import numpy as np

from qedsched import costs
from qedsched.params import (LimitParams, build_system, diffusion_coeffs, initial_state_for, rescale_state,
                             traffic_slack, validate_limits)

# Limiting rates: class 1 abandons at half its service rate, class 2 at twice it.
limits = validate_limits(LimitParams(lam=[0.5, 0.5], mu=[1.0, 1.0], theta=[0.5, 2.0], lam_hat=[0.0, 0.0],
                                     mu_hat=[1.0, 1.0], c2u=[1.0, 1.0], gamma=1.0))
coeffs = diffusion_coeffs(limits)
print("noise r =", coeffs.r, " constant drift ell =", coeffs.ell, " staffing slack beta =", coeffs.beta)

# The n-th system has n servers and arrival rates of order n. Its slack
# sqrt(n) (1 - rho_n) settles at beta as n grows.
for n in (25, 100, 400, 1600):
    sys_n = build_system(limits, n)
    print(f"n={n:5d} lambda_n={sys_n.lam_n} mu_n={np.round(sys_n.mu_n, 4)} slack={traffic_slack(sys_n):.4f}")

# A diffusion-scale point maps to an integer occupancy, and back.
sys_n = build_system(limits, 100)
state = initial_state_for([1.0, 1.0], sys_n)
print("\nx=(1,1) at n=100 -> queues", state.phi, "in service", state.psi)
x_hat, phi_hat, psi_hat = rescale_state(state, sys_n)
print("rescaled back:", x_hat)

# Running costs are functions of the state x and the queue split u.
x, u = np.array([1.0, 0.5]), np.array([0.3, 0.7])
for spec in (costs.power_queue([1, 1], 2), costs.linear_queue([1, 2]), costs.abandonment([1, 1], limits.theta),
             costs.idling()):
    print(f"{spec.cost_id:40s} L(x,u) = {costs.eval_L(spec, x, u):.4f}  growth {costs.growth_bound(spec)}")

# With nobody waiting (1.x <= 0) the split cannot matter.
neg = np.array([-1.0, 0.4])
print("\nat 1.x <= 0:", {tuple(v): costs.eval_L(costs.power_queue([1, 1], 2), neg, v) for v in ((1, 0), (0, 1))})
