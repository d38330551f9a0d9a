"""Configuration and orchestration of solve, sweep, audit and simulate runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import yaml

from . import hjb
from .costs import CostSpec, L_unchecked
from .csvio import append_rows
from .diffusion import SdeRunConfig, simulate_cost
from .errors import ConfigError, InvariantBreach, PolicyContractViolation, QedError
from .params import LimitParams, build_system, diffusion_coeffs, validate_limits
from .policies import NSCP1, SchedulingPolicy, make_policy, theta_round
from .policyfn import PolicyFn
from .simulator import ReplicationSummary, horizon_for, replicate, run, write_results

SWEEP_COLUMNS = ("experiment_id", "n", "policy_id", "cost_id", "x0", "mean_cost", "se", "gap_to_V",
                 "wc_violations", "np_violations", "seed_range")

_KNOWN_KEYS = {"experiment_id", "limits", "cost", "grid", "x0", "probes", "sweep_n", "policies", "reps",
               "base_seed", "horizon_rule", "output_path", "variance_reduction", "diffusion", "audit"}


@dataclass
class ExperimentConfig:
    limits: LimitParams
    cost: CostSpec
    grid: hjb.GridSpec
    x0: tuple[float, ...]
    sweep_n: tuple[int, ...] = (25, 100, 400)
    policies: tuple[str, ...] = ("pscp", "nscp2")
    reps: int = 200
    base_seed: int = 0
    rel_tail: float = 1e-3
    output_path: str = "out/experiment"
    experiment_id: str = "experiment"
    probes: tuple[tuple[float, ...], ...] = ()
    variance_reduction: str = "martingale"
    diffusion: Mapping[str, Any] = field(default_factory=dict)
    audit: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        k = self.limits.k
        if len(self.x0) != k:
            raise ConfigError(f"x0 has {len(self.x0)} entries, model has {k} classes")
        if any(len(p) != k for p in self.probes):
            raise ConfigError("every probe point needs one entry per class")
        if any(b <= a for a, b in zip(self.sweep_n, self.sweep_n[1:])):
            raise ConfigError(f"sweep_n must be strictly increasing, got {list(self.sweep_n)}")
        if self.reps < 2:
            raise ConfigError("reps must be at least 2")
        if self.variance_reduction not in ("martingale", "none"):
            raise ConfigError(f"unknown variance_reduction {self.variance_reduction!r}")
        if not 0 < self.rel_tail <= 1:
            raise ConfigError("horizon_rule.rel_tail must lie in (0, 1]")

    @property
    def horizon(self) -> float:
        return horizon_for(self.limits.gamma, self.cost.growth_degree,
                           state_scale=float(np.sum(np.abs(self.x0))), rel_tail=self.rel_tail)

    def with_overrides(self, seed: int | None = None, reps: int | None = None,
                       out: str | None = None) -> "ExperimentConfig":
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["base_seed"] = int(seed)
        if reps is not None:
            changes["reps"] = int(reps)
        if out is not None:
            changes["output_path"] = str(out)
        return replace(self, **changes)


def _vec(v, name) -> tuple[float, ...]:
    try:
        return tuple(float(a) for a in v)
    except TypeError as exc:
        raise ConfigError(f"{name} must be a list of numbers") from exc


def config_from_dict(d: Mapping[str, Any]) -> ExperimentConfig:
    if not isinstance(d, Mapping):
        raise ConfigError("config must be a mapping")
    unknown = set(d) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("limits", "cost", "x0"):
        if key not in d:
            raise ConfigError(f"config is missing {key!r}")
    try:
        limits = validate_limits(LimitParams.from_dict(d["limits"]))
    except KeyError as exc:
        raise ConfigError(f"limits is missing {exc}") from exc
    cost = CostSpec.from_dict(d["cost"], theta=limits.theta.tolist())
    try:
        grid = hjb.GridSpec.from_dict(d.get("grid", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid section: {exc}") from exc
    return ExperimentConfig(
        limits=limits,
        cost=cost,
        grid=grid,
        x0=_vec(d["x0"], "x0"),
        sweep_n=tuple(int(v) for v in d.get("sweep_n", (25, 100, 400))),
        policies=tuple(str(p) for p in d.get("policies", ("pscp", "nscp2"))),
        reps=int(d.get("reps", 200)),
        base_seed=int(d.get("base_seed", 0)),
        rel_tail=float(d.get("horizon_rule", {}).get("rel_tail", 1e-3)),
        output_path=str(d.get("output_path", "out/experiment")),
        experiment_id=str(d.get("experiment_id", "experiment")),
        probes=tuple(_vec(p, "probe") for p in d.get("probes", ())),
        variance_reduction=str(d.get("variance_reduction", "martingale")),
        diffusion=dict(d.get("diffusion", {})),
        audit=dict(d.get("audit", {})),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return config_from_dict(raw)


def canonical_config_dict() -> dict[str, Any]:
    text = resources.files("qedsched").joinpath("data/canonical.yaml").read_text()
    return yaml.safe_load(text)


def canonical_config(**overrides) -> ExperimentConfig:
    """The shipped two-class configuration, optionally with top-level keys replaced."""
    d = canonical_config_dict()
    d.update(overrides)
    return config_from_dict(d)


# -- solve ---------------------------------------------------------------------

_SOLVE_CACHE: dict[tuple, hjb.ValueGrid] = {}


def solve(cfg: ExperimentConfig) -> hjb.ValueGrid:
    """HJB solution for the config (memoized per process)."""
    key = (tuple(sorted((k, tuple(np.ravel(v))) for k, v in cfg.limits.to_dict().items() if k != "gamma")),
           cfg.limits.gamma, cfg.cost.cost_hash, cfg.grid)
    vg = _SOLVE_CACHE.get(key)
    if vg is None:
        vg = hjb.solve_hjb(cfg.grid, cfg.cost, diffusion_coeffs(cfg.limits), cfg.limits)
        _SOLVE_CACHE[key] = vg
    return vg


@dataclass
class SolveSummary:
    path: Path
    max_residual: float
    interior_fraction: float
    iterations: int
    probe_values: dict[tuple[float, ...], float]

    def line(self) -> str:
        probes = " ".join(f"V({','.join(f'{v:g}' for v in p)})={val:.6g}" for p, val in self.probe_values.items())
        return (f"max_residual={self.max_residual:.3g} interior_fraction={self.interior_fraction:.3f} "
                f"iterations={self.iterations} {probes}")


def cmd_solve(cfg: ExperimentConfig, out: str | Path | None = None) -> SolveSummary:
    vg = solve(cfg)
    coeffs = diffusion_coeffs(cfg.limits)
    rep = hjb.residual_report(vg, cfg.cost, coeffs, cfg.limits)
    path = Path(out) if out is not None else Path(cfg.output_path + "_grid.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    hjb.save_value_grid(vg, path)
    V = hjb.value_fn(vg)
    probes = cfg.probes or (cfg.x0,)
    values = {tuple(p): float(V(np.asarray(p))) for p in probes}
    return SolveSummary(path, rep.max_interior_residual, rep.interior_fraction, vg.iterations, values)


# -- sweep ---------------------------------------------------------------------


@dataclass
class SweepCell:
    n: int
    policy_id: str
    summary: ReplicationSummary
    gap: float
    note: str = ""


@dataclass
class SweepResult:
    path: Path | None
    V: float
    cells: list[SweepCell]
    diffusion_mean: float | None
    diffusion_se: float | None
    horizon: float

    def cell(self, n: int, policy_id_prefix: str) -> SweepCell:
        for c in self.cells:
            if c.n == n and c.policy_id.startswith(policy_id_prefix):
                return c
        raise KeyError((n, policy_id_prefix))


def _policy_for(desc: str, cfg: ExperimentConfig, h: PolicyFn, n: int) -> SchedulingPolicy:
    return make_policy(desc, h=h, n=n, cost=cfg.cost, limits=cfg.limits)


def _fmt_x(x: Sequence[float]) -> str:
    return ";".join(f"{v:g}" for v in x)


def cmd_sweep(cfg: ExperimentConfig, out: str | Path | None = None, *, with_diffusion: bool = True,
              progress: Callable[[str], None] | None = None) -> SweepResult:
    """Replicated queue costs for every (n, policy) cell, compared with ``V(x0)``.

    Writes one CSV row per cell plus a ``limit`` row carrying ``V(x0)``
    and, unless disabled, a ``diffusion`` row with the Monte Carlo cost of
    the grid policy in the limiting diffusion.
    """
    vg = solve(cfg)
    coeffs = diffusion_coeffs(cfg.limits)
    V = hjb.value_fn(vg)
    h = hjb.extract_policy_fn(vg)
    x0 = np.asarray(cfg.x0)
    v0 = float(V(x0))
    T = cfg.horizon
    control = None
    if cfg.variance_reduction == "martingale":
        control = lambda xh: V(np.asarray(xh))
    cells: list[SweepCell] = []
    seed_range = f"{cfg.base_seed}-{cfg.base_seed + cfg.reps - 1}"
    rows = []
    for n in cfg.sweep_n:
        sys = build_system(cfg.limits, n)
        for desc in cfg.policies:
            pol = _policy_for(desc, cfg, h, n)
            s = replicate(sys, pol, cfg.cost, T, cfg.reps, cfg.base_seed, x0=x0, c2u=cfg.limits.c2u,
                          control=control)
            note = ""
            if pol.kind == NSCP1 and not cfg.cost.smooth_policy_expected:
                note = "outside the Hölder hypothesis on h; convergence not claimed"
            cells.append(SweepCell(n, pol.policy_id, s, s.mean_cost - v0, note))
            rows.append({"experiment_id": cfg.experiment_id, "n": n, "policy_id": pol.policy_id,
                         "cost_id": cfg.cost.cost_id, "x0": _fmt_x(cfg.x0), "mean_cost": s.mean_cost,
                         "se": s.std_error, "gap_to_V": s.mean_cost - v0, "wc_violations": s.wc_violations,
                         "np_violations": s.np_violations, "seed_range": seed_range})
            if progress:
                progress(f"n={n} {pol.policy_id}: {s.mean_cost:.5g} ± {s.std_error:.2g} (V={v0:.5g})"
                         + (f" [{note}]" if note else ""))
    dmean = dse = None
    if cfg.sweep_n and with_diffusion:
        dcfg = SdeRunConfig(cfg.x0, dt=float(cfg.diffusion.get("dt", 2e-3)), horizon=min(T, 15.0),
                            reps=int(cfg.diffusion.get("reps", 4000)), seed=cfg.base_seed)
        d = simulate_cost(dcfg, h, cfg.cost, coeffs, cfg.limits)
        dmean, dse = d.mean, d.se
        rows.append({"experiment_id": cfg.experiment_id, "n": "diffusion", "policy_id": "hjb",
                     "cost_id": cfg.cost.cost_id, "x0": _fmt_x(cfg.x0), "mean_cost": dmean, "se": dse,
                     "gap_to_V": dmean - v0, "wc_violations": 0, "np_violations": 0,
                     "seed_range": f"{cfg.base_seed}"})
    if cfg.sweep_n:
        rows.append({"experiment_id": cfg.experiment_id, "n": "limit", "policy_id": "V",
                     "cost_id": cfg.cost.cost_id, "x0": _fmt_x(cfg.x0), "mean_cost": v0, "se": 0.0,
                     "gap_to_V": 0.0, "wc_violations": 0, "np_violations": 0, "seed_range": ""})
    path = None
    if out is not False:
        path = Path(out) if out is not None else Path(cfg.output_path + "_sweep.csv")
        append_rows(path, SWEEP_COLUMNS, rows)
    return SweepResult(path, v0, cells, dmean, dse, T)


# -- simulate ------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, n: int | None = None, policy: str | None = None,
                 out: str | Path | None = None) -> list:
    """Plain replications of one (n, policy) cell, one CSV row per seed."""
    n = int(n if n is not None else (cfg.sweep_n[0] if cfg.sweep_n else 100))
    desc = policy or (cfg.policies[0] if cfg.policies else "pscp")
    h = hjb.extract_policy_fn(solve(cfg)) if desc.split("(")[0] in ("pscp", "nscp1", "nscp2") else None
    sys = build_system(cfg.limits, n)
    pol = make_policy(desc, h=h, n=n, cost=cfg.cost, limits=cfg.limits)
    results = [run(sys, pol, cfg.cost, cfg.horizon, cfg.base_seed + j, x0=cfg.x0, c2u=cfg.limits.c2u)
               for j in range(cfg.reps)]
    path = Path(out) if out is not None else Path(cfg.output_path + "_sim.csv")
    write_results(path, results)
    return results


# -- audit ---------------------------------------------------------------------


@dataclass
class AuditItem:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def theta_round_fuzz(cases: int = 10_000, seed: int = 0, max_k: int = 6) -> tuple[int, str]:
    """Random nonnegative vectors with integer totals; returns (#failures, worst case)."""
    rng = np.random.default_rng(seed)
    fails = 0
    worst = ""
    for _ in range(cases):
        k = int(rng.integers(1, max_k + 1))
        total = int(rng.integers(0, 60))
        y = rng.dirichlet(np.ones(k)) * total if total else np.zeros(k)
        y[-1] = max(total - float(np.sum(y[:-1])), 0.0)
        if abs(math.fsum(y) - total) > 1e-9:
            continue
        z = theta_round(y)
        ok = int(z.sum()) == total and np.all(z >= 0) and np.linalg.norm(z - y) <= 2 * k
        if not ok:
            fails += 1
            worst = f"y={y.tolist()} z={z.tolist()}"
    return fails, worst


def cmd_audit(cfg: ExperimentConfig, extra_policies: Sequence[SchedulingPolicy] = ()) -> list[AuditItem]:
    """Invariant matrix on a short run of every configured policy."""
    items: list[AuditItem] = []
    coeffs = diffusion_coeffs(cfg.limits)
    n = int(cfg.audit.get("n", 50))
    reps = int(cfg.audit.get("reps", 20))
    horizon = float(cfg.audit.get("horizon", 5.0))
    vg = solve(cfg)
    h = hjb.extract_policy_fn(vg)
    sys = build_system(cfg.limits, n)

    policies = []
    for desc in cfg.policies:
        try:
            policies.append(_policy_for(desc, cfg, h, n))
        except QedError as exc:
            items.append(AuditItem(f"build {desc}", False, str(exc)))
    policies.extend(extra_policies)
    for pol in policies:
        try:
            s = replicate(sys, pol, cfg.cost, horizon, reps, cfg.base_seed, x0=cfg.x0, c2u=cfg.limits.c2u)
        except (InvariantBreach, PolicyContractViolation) as exc:
            items.append(AuditItem(f"{pol.policy_id} run", False, f"{type(exc).__name__}: {exc}"))
            continue
        items.append(AuditItem(f"{pol.policy_id} flow balance", True, f"{s.events} events audited"))
        items.append(AuditItem(f"{pol.policy_id} work conservation", s.wc_violations == 0,
                               f"{s.wc_violations} violations"))
        if pol.declares_nonpreemptive:
            items.append(AuditItem(f"{pol.policy_id} nonpreemption", s.np_violations == 0,
                                   f"{s.np_violations} routing decreases"))
        worst = max(s.abandon_balance_se)
        items.append(AuditItem(f"{pol.policy_id} abandonment balance", worst <= 3.0,
                               f"max {worst:.2f} SE over {reps} replications"))
        a = run(sys, pol, cfg.cost, horizon, cfg.base_seed, x0=cfg.x0, c2u=cfg.limits.c2u)
        b = run(sys, pol, cfg.cost, horizon, cfg.base_seed, x0=cfg.x0, c2u=cfg.limits.c2u)
        same = (a.discounted_cost == b.discounted_cost and a.event_count == b.event_count
                and a.final_state == b.final_state)
        items.append(AuditItem(f"{pol.policy_id} seed replay", same, f"cost {a.discounted_cost!r}"))

    fails, worst = theta_round_fuzz(int(cfg.audit.get("theta_cases", 10_000)), cfg.base_seed)
    items.append(AuditItem("rounding map", fails == 0, f"{fails} failures" + (f" ({worst})" if worst else "")))

    rng = np.random.default_rng(cfg.base_seed)
    B = cfg.grid.box_halfwidth
    pts = rng.uniform(-1.2 * B, 1.2 * B, size=(2000, cfg.limits.k))
    u = h(pts)
    ok = bool(np.all(u >= -1e-12) and np.allclose(u.sum(axis=1), 1.0, atol=1e-10))
    items.append(AuditItem("policy outputs in simplex", ok, f"{len(pts)} points incl. outside the box"))

    X = vg.nodes()
    neg = X[X.sum(axis=1) <= 0]
    p = rng.normal(size=neg.shape)
    H0, _ = hjb.hamiltonian(neg, p, cfg.cost, coeffs, cfg.limits, resolution=cfg.grid.simplex_resolution)
    dev = 0.0
    for _ in range(10):
        U = rng.dirichlet(np.ones(cfg.limits.k), size=len(neg))
        val = np.sum(hjb.drift(neg, U, coeffs, cfg.limits) * p, axis=1) + L_unchecked(cfg.cost, neg, U)
        dev = max(dev, float(np.max(np.abs(val - H0))))
    items.append(AuditItem("control has no effect when no one waits", dev <= 1e-10, f"max deviation {dev:.2e}"))
    return items
