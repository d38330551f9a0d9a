"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict; ``conftest.py`` prints them all at
the end of the session. Running this file directly prints the same lines.
"""

import math
import sys

import numpy as np
import pytest
from scipy import stats

from qedsched.costs import linear_queue, power_queue, zero_cost
from qedsched.diffusion import SdeRunConfig, simulate_cost
from qedsched.experiments import canonical_config, cmd_audit, cmd_sweep, solve
from qedsched.hjb import (GridSpec, assemble_policy_system, check_monotone, domain_doubling_gap, drift,
                          extract_policy_fn, gradient_fn, hamiltonian, residual_report, solve_hjb,
                          solve_k1_reference, value_fn)
from qedsched.costs import L_unchecked
from qedsched.params import LimitParams, build_system, diffusion_coeffs
from qedsched.policies import n_scp2_policy, p_scp_policy, static_priority
from qedsched.policyfn import ConstantPolicy, MollifiedPolicy
from qedsched.simulator import replicate, run
from qedsched.state import QueueState

pytestmark = pytest.mark.slow

VERDICTS: list[str] = []


def record(number: int, title: str, passed: bool, detail: str) -> None:
    VERDICTS.append(f"{'PASS' if passed else 'FAIL'}  criterion {number} ({title}): {detail}")
    assert passed, detail


# 1 ---------------------------------------------------------------------------


def test_criterion_1_single_class_triangle():
    limits = LimitParams(lam=[1.0], mu=[1.0], theta=[0.5], lam_hat=[0.0], mu_hat=[0.5], c2u=[1.0], gamma=1.0)
    coeffs = diffusion_coeffs(limits)
    cost = linear_queue([1.0])
    vg = solve_hjb(GridSpec(box_halfwidth=6.0, points_per_axis=201), cost, coeffs, limits)
    grid = value_fn(vg)
    ode = solve_k1_reference(cost, coeffs, limits)
    ok = True
    parts = []
    for j, x in enumerate((-1.0, 0.0, 1.0)):
        mc = simulate_cost(SdeRunConfig((x,), dt=1e-3, horizon=12, reps=10_000, seed=31 + j), ConstantPolicy((1.0,)),
                           cost, coeffs, limits)
        tol = max(3 * mc.se, 5e-3)
        g, o = float(grid(np.array([x]))), float(ode(x))
        worst = max(abs(g - o), abs(g - mc.mean), abs(o - mc.mean))
        ok &= worst <= tol
        parts.append(f"x={x:g}: grid {g:.4f} ode {o:.4f} mc {mc.mean:.4f}±{mc.se:.4f} (max gap {worst:.1e} <= {tol:.1e})")
    record(1, "single-class triangle", ok, "; ".join(parts))


# 2 ---------------------------------------------------------------------------


def test_criterion_2_erlang_a_stationary_law():
    n = 20
    lim = LimitParams(lam=[1.0], mu=[1.0], theta=[0.5], lam_hat=[-0.1 * math.sqrt(n)], mu_hat=[0.0], c2u=[1.0],
                      gamma=1.0)
    sys_n = build_system(lim, n)
    lam, mu, th = float(sys_n.lam_n[0]), float(sys_n.mu_n[0]), float(sys_n.theta_n[0])
    w = [1.0]
    for x in range(200):
        w.append(w[-1] * lam / (min(x + 1, n) * mu + max(x + 1 - n, 0) * th))
    pmf = np.array(w) / sum(w)
    reps = 100_000
    rng = np.random.default_rng(8)
    starts = rng.choice(pmf.size, size=reps, p=pmf)
    pol, cost = static_priority([0]), zero_cost(1)
    ends = np.array([run(sys_n, pol, cost, 2.0, j, initial=QueueState(phi=(max(int(s) - n, 0),),
                                                                      psi=(min(int(s), n),))).final_state.x[0]
                     for j, s in enumerate(starts)])
    expected = pmf * reps
    lo = int(np.argmax(np.cumsum(expected) >= 5))
    hi = int(pmf.size - 1 - np.argmax(np.cumsum(expected[::-1]) >= 5))
    obs = np.bincount(np.clip(ends, lo, hi), minlength=pmf.size)[lo:hi + 1]
    exp = expected[lo:hi + 1].copy()
    exp[0] += expected[:lo].sum()
    exp[-1] += expected[hi + 1:].sum()
    chi2, p = stats.chisquare(obs, exp)
    record(2, "Erlang-A stationary law", p > 0.01,
           f"n=20, rho=0.9, {reps} stationary-start replications read at t=2, {len(obs)} bins, "
           f"chi2={chi2:.1f}, p={p:.3f}")


# 3 ---------------------------------------------------------------------------


def test_criterion_3_abandonment_balance():
    cfg = canonical_config()
    h = extract_policy_fn(solve(cfg))
    sys_n = build_system(cfg.limits, 100)
    worst = {}
    for pol in (p_scp_policy(h), n_scp2_policy(h, 100), static_priority([1, 0])):
        s = replicate(sys_n, pol, cfg.cost, cfg.horizon, 200, cfg.base_seed, x0=cfg.x0, c2u=cfg.limits.c2u)
        worst[pol.policy_id] = max(s.abandon_balance_se)
    ok = all(v <= 3.0 for v in worst.values())
    record(3, "abandonment balance", ok,
           "n=100, 200 reps; max per-class gap in SE: " + ", ".join(f"{k} {v:.2f}" for k, v in worst.items()))


# 4 ---------------------------------------------------------------------------


def test_criterion_4_invariant_suite():
    cfg = canonical_config()
    items = cmd_audit(cfg)
    failed = [it.name for it in items if not it.passed]
    record(4, "invariant suite", not failed,
           f"{len(items) - len(failed)}/{len(items)} audit items pass" + (f"; failing: {failed}" if failed else ""))


# 5 ---------------------------------------------------------------------------


def test_criterion_5_hjb_structure():
    cfg = canonical_config()
    coeffs = diffusion_coeffs(cfg.limits)
    vg = solve(cfg)
    A, _ = assemble_policy_system(cfg.grid, vg.policy.reshape(-1, 2), cfg.cost, coeffs, cfg.limits)
    monotone = check_monotone(A, cfg.limits.gamma)
    rep = residual_report(vg, cfg.cost, coeffs, cfg.limits)
    gap = domain_doubling_gap(vg, cfg.cost, coeffs, cfg.limits)
    rng = np.random.default_rng(5)
    X = rng.uniform(-5, 5, (1000, 2))
    P, Q = rng.normal(size=(2, 1000, 2)) * 3
    t = rng.uniform(size=1000)
    hm, _ = hamiltonian(X, t[:, None] * P + (1 - t[:, None]) * Q, cfg.cost, coeffs, cfg.limits)
    hp, _ = hamiltonian(X, P, cfg.cost, coeffs, cfg.limits)
    hq, _ = hamiltonian(X, Q, cfg.cost, coeffs, cfg.limits)
    concave_breach = float(np.max(t * hp + (1 - t) * hq - hm))
    tol = 10 * cfg.grid.tol_residual
    ok = monotone and rep.max_interior_residual <= 1e-2 and gap <= tol and concave_breach <= 1e-9
    record(5, "HJB structure", ok,
           f"monotone={monotone}, max interior residual {rep.max_interior_residual:.2e} <= 1e-2, "
           f"doubling gap {gap:.2e} <= {tol:.0e}, worst concavity breach {concave_breach:.1e}")


# 6 ---------------------------------------------------------------------------


def _nonincreasing_within_se(cells) -> bool:
    for a, b in zip(cells, cells[1:]):
        se = math.hypot(a.summary.std_error, b.summary.std_error)
        if abs(b.gap) > abs(a.gap) + se:
            return False
    return True


def test_criterion_6_convergence_to_value():
    cfg = canonical_config(policies=["pscp", "nscp2"])
    res = cmd_sweep(cfg, out=False, with_diffusion=False)
    ok = True
    parts = [f"V(x0)={res.V:.4f}"]
    for prefix in ("pscp", "nscp2"):
        cells = [res.cell(n, prefix) for n in cfg.sweep_n]
        rel = abs(cells[-1].gap) / res.V
        mono = _nonincreasing_within_se(cells)
        ok &= mono and rel <= 0.10
        parts.append(f"{prefix}: " + " ".join(f"n={c.n} {c.summary.mean_cost:.4f}±{c.summary.std_error:.4f}"
                                             for c in cells) + f", gaps shrink={mono}, final rel gap {rel:.1%}")
    record(6, "convergence to the HJB value", ok, "; ".join(parts))


# 7 ---------------------------------------------------------------------------


def test_criterion_7_baselines_respect_lower_bound():
    cost = {"kind": "PowerQueue", "coeffs": [1.0, 2.0], "powers": [2, 2]}
    cfg = canonical_config(cost=cost, policies=["prio(1,2)", "cmu"])
    res = cmd_sweep(cfg, out=False, with_diffusion=False)
    ok = all(c.summary.mean_cost >= res.V - 3 * c.summary.std_error for c in res.cells)
    worst = min(res.cells, key=lambda c: (c.summary.mean_cost - res.V) / max(c.summary.std_error, 1e-300))
    record(7, "baseline lower bound", ok,
           f"V(x0)={res.V:.4f}; {len(res.cells)} cells; closest: n={worst.n} {worst.policy_id} "
           f"{worst.summary.mean_cost:.4f}±{worst.summary.std_error:.4f}")


# 8 ---------------------------------------------------------------------------


def test_criterion_8_mollified_policy_near_optimal():
    cfg = canonical_config()
    coeffs = diffusion_coeffs(cfg.limits)
    vg = solve(cfg)
    h_eps = MollifiedPolicy(extract_policy_fn(vg), 0.05)
    G = gradient_fn(vg)
    X = vg.nodes()
    inner = np.all(np.abs(X) <= 0.9 * cfg.grid.box_halfwidth, axis=1) & (X.sum(axis=1) > 0.2)
    rng = np.random.default_rng(17)
    pts = X[rng.choice(np.flatnonzero(inner), 100, replace=False)]
    Df = G(pts)
    phi_star, _ = hamiltonian(pts, Df, cfg.cost, coeffs, cfg.limits)
    U = h_eps(pts)
    phi = np.sum(drift(pts, U, coeffs, cfg.limits) * Df, axis=1) + L_unchecked(cfg.cost, pts, U)
    slack = phi_star + 0.05 * (1 + np.abs(phi_star)) - phi
    record(8, "mollified policy near optimal", bool(np.all(slack >= 0)),
           f"100 nodes with 1.x > 0.2, eps=0.05; min slack {slack.min():.3e}, "
           f"max phi - phi* {np.max(phi - phi_star):.3e}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
