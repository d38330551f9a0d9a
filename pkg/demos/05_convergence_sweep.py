"""A reduced convergence sweep: queue costs approach V(x0) as n grows.

Uses 40 replications per cell to keep the run near two minutes. The
acceptance suite runs the same sweep at the configured 200.

With equal cost weights and service rates every c-mu score ties, and
ties go to the higher class index, so ``cmu`` and ``prio(2,1)`` make
identical decisions here and print identical rows.
"""

import tempfile
from pathlib import Path

from qedsched.csvio import read_rows
from qedsched.experiments import canonical_config, cmd_sweep

cfg = canonical_config(reps=40)
out = Path(tempfile.mkdtemp()) / "sweep.csv"
res = cmd_sweep(cfg, out, progress=print)
print(f"\nV(x0) = {res.V:.4f}; diffusion Monte Carlo {res.diffusion_mean:.4f}±{res.diffusion_se:.4f}")
print(f"rows written to {out}:")
for row in read_rows(out):
    print("  " + ", ".join(f"{k}={row[k]}" for k in ("n", "policy_id", "mean_cost", "se", "gap_to_V")))
