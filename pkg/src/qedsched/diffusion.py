"""Monte Carlo for the limiting controlled diffusion under a Markov policy.

Paths follow the Euler-Maruyama recursion

    X_{m+1} = X_m + b(X_m, u_m) dt + r sqrt(dt) Z_m,   u_m = h(X_m)

with all replications advanced together. Step ``m`` of replication ``j``
uses the same normal vector for every policy run with the same seed, so
policy comparisons share common random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .costs import CostSpec, L_unchecked, growth_bound
from .hjb import drift
from .params import DiffusionCoeffs, LimitParams
from .policyfn import PolicyFn

TAIL_SAFETY = 10.0


@dataclass(frozen=True)
class SdeRunConfig:
    x0: tuple[float, ...]
    dt: float = 1e-3
    horizon: float = 12.0
    reps: int = 10_000
    seed: int = 0
    noise_dt: float | None = None
    """Finest step of the driving Brownian path; set it to couple runs with different ``dt``."""

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", tuple(float(v) for v in np.ravel(self.x0)))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon < self.dt:
            raise ValueError("horizon must be at least one step")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.noise_dt is not None:
            ratio = self.dt / self.noise_dt
            if self.noise_dt <= 0 or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError("dt must be an integer multiple of noise_dt")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class SdeResult:
    mean: float
    se: float
    tail_bound: float
    samples: np.ndarray

    def __iter__(self):
        # allows ``mean, se = simulate_cost(...)``
        return iter((self.mean, self.se))


class _Noise:
    """Standard normal increments per step, optionally aggregated from a finer path."""

    def __init__(self, cfg: SdeRunConfig, k: int):
        self.rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        self.shape = (cfg.reps, k)
        self.sub = 1 if cfg.noise_dt is None else int(round(cfg.dt / cfg.noise_dt))

    def next(self) -> np.ndarray:
        if self.sub == 1:
            return self.rng.standard_normal(self.shape)
        fine = self.rng.standard_normal((self.sub,) + self.shape)
        return fine.sum(axis=0) / math.sqrt(self.sub)


def _paths(cfg: SdeRunConfig, policy: PolicyFn, cost: CostSpec, coeffs: DiffusionCoeffs,
           limits: LimitParams, observe: Callable[[int, float, np.ndarray, np.ndarray], None] | None = None):
    k = limits.k
    X = np.tile(np.asarray(cfg.x0, dtype=float), (cfg.reps, 1))
    if X.shape[1] != k:
        raise ValueError(f"x0 has dimension {X.shape[1]}, model has {k} classes")
    acc = np.zeros(cfg.reps)
    noise = _Noise(cfg, k)
    dt = cfg.dt
    sq = coeffs.r * math.sqrt(dt)
    gamma = limits.gamma
    for m in range(cfg.steps):
        t = m * dt
        if observe is not None:
            observe(m, t, X, acc)
        u = policy(X)
        acc += math.exp(-gamma * t) * L_unchecked(cost, X, u) * dt
        X = X + drift(X, u, coeffs, limits) * dt + sq * noise.next()
    if observe is not None:
        observe(cfg.steps, cfg.steps * dt, X, acc)
    return acc, X


def simulate_cost(cfg: SdeRunConfig, policy: PolicyFn, cost: CostSpec, coeffs: DiffusionCoeffs,
                  limits: LimitParams) -> SdeResult:
    """Discounted cost of ``policy`` from ``cfg.x0``: mean, standard error and a tail bound.

    The tail bound covers the cost after the horizon through the growth
    envelope ``c (1 + ||x||_1^m)`` evaluated at the terminal states.
    """
    if cost.is_zero:
        return SdeResult(0.0, 0.0, 0.0, np.zeros(cfg.reps))
    acc, X = _paths(cfg, policy, cost, coeffs, limits)
    c, m = growth_bound(cost)
    T = cfg.steps * cfg.dt
    envelope = c * (1.0 + float(np.mean(np.sum(np.abs(X), axis=1) ** m)))
    tail = TAIL_SAFETY * envelope * math.exp(-limits.gamma * T) / limits.gamma
    se = float(acc.std(ddof=1) / math.sqrt(acc.size)) if acc.size > 1 else 0.0
    return SdeResult(float(acc.mean()), se, tail, acc)


@dataclass
class PolicyComparison:
    names: list[str]
    means: dict[str, float]
    ses: dict[str, float]
    diff: dict[tuple[str, str], tuple[float, float]]
    """``(a, b) -> (mean of cost_a - cost_b, SE of the paired difference)``."""

    def is_best(self, name: str, z: float = 3.0) -> bool:
        """True if ``name`` is not beaten by any other policy by more than ``z`` paired SEs."""
        return all(self.diff[(name, other)][0] <= z * self.diff[(name, other)][1]
                   for other in self.names if other != name)

    def rows(self) -> list[dict[str, object]]:
        return [{"policy": a, "mean": self.means[a], "se": self.ses[a]} for a in self.names]


def compare_policies(x0: Sequence[float], policies: Mapping[str, PolicyFn], cost: CostSpec,
                     coeffs: DiffusionCoeffs, limits: LimitParams, *, dt: float = 2e-3,
                     horizon: float = 12.0, reps: int = 4000, seed: int = 0) -> PolicyComparison:
    """Costs of several policies on common random numbers, with paired differences."""
    samples = {}
    for name, pol in policies.items():
        cfg = SdeRunConfig(tuple(x0), dt=dt, horizon=horizon, reps=reps, seed=seed)
        samples[name] = simulate_cost(cfg, pol, cost, coeffs, limits).samples
    names = list(policies)
    n = reps
    means = {a: float(samples[a].mean()) for a in names}
    ses = {a: float(samples[a].std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0 for a in names}
    diff = {}
    for a in names:
        for b in names:
            if a != b:
                d = samples[a] - samples[b]
                diff[(a, b)] = (float(d.mean()), float(d.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
    return PolicyComparison(names, means, ses, diff)


def verification_drift(x0: Sequence[float], value: Callable[[np.ndarray], np.ndarray], policy: PolicyFn,
                       cost: CostSpec, coeffs: DiffusionCoeffs, limits: LimitParams,
                       times: Sequence[float] = (0.5, 1.0, 2.0), *, dt: float = 2e-3, reps: int = 4000,
                       seed: int = 0) -> dict[float, tuple[float, float]]:
    """Mean and SE of ``e^{-gamma t} f(X_t) + int_0^t e^{-gamma s} L ds - f(x0)`` at each ``t``.

    For ``f`` solving the HJB equation this is nonnegative in expectation
    under any policy and zero under the optimal one.
    """
    want = {int(round(t / dt)): t for t in times}
    cfg = SdeRunConfig(tuple(x0), dt=dt, horizon=max(times), reps=reps, seed=seed)
    f0 = float(np.ravel(value(np.asarray([cfg.x0])))[0])
    out: dict[float, tuple[float, float]] = {}

    def observe(m, t, X, acc):
        if m in want:
            stat = math.exp(-limits.gamma * t) * np.ravel(value(X)) + acc - f0
            out[want[m]] = (float(stat.mean()), float(stat.std(ddof=1) / math.sqrt(stat.size)))

    _paths(cfg, policy, cost, coeffs, limits, observe)
    return out
