"""Cross-check the grid value against Monte Carlo of the limiting diffusion.

Paths share their Gaussian increments across policies, so the paired
differences in the comparison table are much tighter than the raw means.
"""

import numpy as np

from qedsched.diffusion import SdeRunConfig, compare_policies, simulate_cost, verification_drift
from qedsched.experiments import canonical_config, solve
from qedsched.hjb import extract_policy_fn, value_fn
from qedsched.params import diffusion_coeffs
from qedsched.policyfn import ConstantPolicy

cfg = canonical_config()
coeffs = diffusion_coeffs(cfg.limits)
vg = solve(cfg)
h, V = extract_policy_fn(vg), value_fn(vg)

print("grid value vs simulated cost of the grid policy")
for x in cfg.probes:
    res = simulate_cost(SdeRunConfig(x, dt=2e-3, horizon=10, reps=2000, seed=1), h, cfg.cost, coeffs, cfg.limits)
    print(f"  x={x}: V={V(np.array(x)):.4f}  MC={res.mean:.4f}±{res.se:.4f}  tail<={res.tail_bound:.1e}")

pols = {"grid": h, "all to queue 1": ConstantPolicy((1, 0)), "all to queue 2": ConstantPolicy((0, 1)),
        "even split": ConstantPolicy((0.5, 0.5))}
cmp = compare_policies((1.0, 1.0), pols, cfg.cost, coeffs, cfg.limits, horizon=10, reps=2000, seed=2)
print("\npolicy comparison from x=(1,1)")
for name in cmp.names:
    extra = "" if name == "grid" else "  grid minus this: {:+.4f}±{:.4f}".format(*cmp.diff[("grid", name)])
    print(f"  {name:15s} {cmp.means[name]:.4f}±{cmp.ses[name]:.4f}{extra}")
print("  grid policy is best within 3 paired SE:", cmp.is_best("grid"))

# e^{-t} V(X_t) + discounted cost so far - V(x0) should drift upward for
# any policy and stay flat for the optimal one.
for name in ("grid", "all to queue 2"):
    out = verification_drift((1.0, 0.5), V, pols[name], cfg.cost, coeffs, cfg.limits, reps=2000)
    print(f"\n{name}: " + ", ".join(f"t={t}: {m:+.4f}±{s:.4f}" for t, (m, s) in out.items()))
