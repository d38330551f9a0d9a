"""Discrete-event simulation of the n-th multiclass many-server system.

Service completions and abandonments are driven by aggregate exponential
clocks with rates ``mu_i * psi_i`` and ``theta_i * phi_i``; arrivals come
from per-class renewal streams. The discounted running cost is integrated
exactly between events, and the occupancy invariants are audited after
every event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .costs import CostSpec, scalar_ltilde
from .csvio import append_rows
from .errors import InvariantBreach, PolicyContractViolation
from .params import SystemParams, initial_state_for
from .policies import SchedulingPolicy, diagnostic_u
from .state import QueueState

EXPONENTIAL = "Exponential"
GAMMA = "GammaShape"
HYPEREXP = "HyperExpBalanced"
DETERMINISTIC = "Deterministic"
FAMILIES = (EXPONENTIAL, GAMMA, HYPEREXP, DETERMINISTIC)

SIM_COLUMNS = ("seed", "n", "policy_id", "cost_id", "discounted_cost", "tail_bound",
               "abandon_gap_max_se", "wc_violations", "np_violations", "events")

TAIL_SAFETY = 10.0


@dataclass(frozen=True)
class InterarrivalSampler:
    """Interarrival law with given mean and squared coefficient of variation."""

    family: str
    mean: float
    scv: float

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not self.mean > 0:
            raise ValueError("mean interarrival time must be positive")
        if self.scv < 0:
            raise ValueError("scv must be nonnegative")

    @classmethod
    def for_rate(cls, rate: float, scv: float, family: str | None = None) -> "InterarrivalSampler":
        """Default family by SCV: deterministic at 0, gamma below 1, exponential at 1, hyperexponential above."""
        if family is None:
            if scv == 0:
                family = DETERMINISTIC
            elif scv < 1:
                family = GAMMA
            elif scv == 1:
                family = EXPONENTIAL
            else:
                family = HYPEREXP
        mean = math.inf if rate <= 0 else 1.0 / rate
        return cls(family, mean, float(scv))

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        m = self.mean
        if math.isinf(m):
            return np.full(size, math.inf)
        if self.family == EXPONENTIAL:
            return rng.exponential(m, size)
        if self.family == GAMMA:
            if self.scv == 0:
                return np.full(size, m)
            return rng.gamma(1.0 / self.scv, self.scv * m, size)
        if self.family == HYPEREXP:
            c2 = self.scv
            p1 = 0.5 * (1.0 + math.sqrt((c2 - 1.0) / (c2 + 1.0)))
            means = np.array([m / (2 * p1), m / (2 * (1 - p1))])
            phase = (rng.random(size) >= p1).astype(np.int64)
            return rng.exponential(1.0, size) * means[phase]
        return np.full(size, m)


class _Stream:
    """Scalar draws served from numpy blocks."""

    __slots__ = ("_fill", "_block", "_buf", "_pos")

    def __init__(self, fill: Callable[[int], np.ndarray], block: int):
        self._fill = fill
        self._block = block
        self._buf: list[float] = []
        self._pos = 0

    def next(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._fill(self._block).tolist()
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v


@dataclass
class SimResult:
    discounted_cost: float
    tail_bound: float
    abandon_check: tuple[tuple[int, float], ...]
    work_conservation_violations: int
    nonpreemption_violations: int
    event_count: int
    final_state: QueueState
    seed: int
    horizon: float
    n: int
    policy_id: str
    cost_id: str
    tracked: float | None = None
    max_running_cost: float = 0.0
    control_variate: float | None = None

    @property
    def controlled_cost(self) -> float:
        """Discounted cost minus the zero-mean control variate (same expectation)."""
        if self.control_variate is None:
            return self.discounted_cost
        return self.discounted_cost - self.control_variate

    @property
    def abandon_gap_max_se(self) -> float:
        """Largest per-class ``|R_i - theta_i int phi_i|`` in Poisson standard deviations."""
        gaps = [abs(r - e) / math.sqrt(max(e, 1.0)) for r, e in self.abandon_check]
        return max(gaps) if gaps else 0.0

    def csv_row(self) -> dict[str, object]:
        return {"seed": self.seed, "n": self.n, "policy_id": self.policy_id, "cost_id": self.cost_id,
                "discounted_cost": self.discounted_cost, "tail_bound": self.tail_bound,
                "abandon_gap_max_se": self.abandon_gap_max_se,
                "wc_violations": self.work_conservation_violations,
                "np_violations": self.nonpreemption_violations, "events": self.event_count}


def write_results(path, results: Sequence[SimResult]):
    return append_rows(path, SIM_COLUMNS, (r.csv_row() for r in results))


def default_samplers(sys: SystemParams, c2u: Sequence[float] | None = None,
                     family: str | None = None) -> list[InterarrivalSampler]:
    c2u = [1.0] * sys.k if c2u is None else list(c2u)
    return [InterarrivalSampler.for_rate(float(l), float(c), family) for l, c in zip(sys.lam_n, c2u)]


def run(sys: SystemParams, policy: SchedulingPolicy, cost: CostSpec, horizon: float, seed: int, *,
        x0: Sequence[float] | None = None, initial: QueueState | None = None,
        samplers: Sequence[InterarrivalSampler] | None = None, c2u: Sequence[float] | None = None,
        track: Callable[[list[float], tuple[float, ...]], float] | None = None,
        control: Callable[[list[float]], float] | None = None,
        gamma: float | None = None, block: int = 256) -> SimResult:
    """One replication on ``[0, horizon]``.

    The start state is ``initial`` if given, otherwise the integer state
    built from the diffusion-scale point ``x0`` (default 0). The discount
    rate defaults to ``sys.gamma``. ``track`` is
    an optional diagnostic ``g(x_hat, u_n)`` whose discounted integral is
    returned in ``SimResult.tracked``.

    ``control`` is a function ``g`` of the diffusion-scale state. When
    given, the run also accumulates the compensated jump sum

        sum_events e^{-gamma t} [g(X_t) - g(X_t-)] - int e^{-gamma s} sum_j rate_j(s) Delta_j g ds

    over the exponential clocks (services, abandonments, and arrivals of
    classes with exponential interarrival times). It has mean zero, so
    ``discounted_cost - control_variate`` is an unbiased, typically much
    less noisy, cost estimate when ``g`` is close to the value function.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    k, n = sys.k, sys.n
    gamma = float(sys.gamma if gamma is None else gamma)
    if not gamma > 0:
        raise ValueError("discount rate must be positive")
    if initial is None:
        initial = initial_state_for(np.zeros(k) if x0 is None else x0, sys)
    phi = list(initial.phi)
    psi = list(initial.psi)
    if len(phi) != k:
        raise ValueError("initial state has the wrong number of classes")
    if min(phi) < 0 or min(psi) < 0 or sum(psi) > n:
        raise InvariantBreach("initial state violates occupancy constraints", _dump(0.0, phi, psi))
    X0 = [a + b for a, b in zip(phi, psi)]
    psi0 = list(psi)

    ss = np.random.SeedSequence(int(seed))
    children = ss.spawn(k + 1)
    clock = np.random.default_rng(children[0])
    exps = _Stream(clock.standard_exponential, block)
    unis = _Stream(clock.random, block)
    if samplers is None:
        samplers = default_samplers(sys, c2u)
    streams = []
    for smp, child in zip(samplers, children[1:]):
        rng = np.random.default_rng(child)
        streams.append(_Stream(lambda m, smp=smp, rng=rng: smp.draw(rng, m), block))
    next_arr = [s.next() for s in streams]

    mu = sys.mu_n.tolist()
    th = sys.theta_n.tolist()
    sn = sys.sqrt_n
    center = (sys.rho * n).tolist()
    ltil = scalar_ltilde(cost)
    zero_cost = cost.is_zero
    preemptive = policy.preemptive
    decide = policy.bind(sys)
    declares_wc = policy.declares_work_conserving

    cum_arr = [0] * k
    cum_svc = [0] * k
    cum_ab = [0] * k
    routed = [0] * k
    int_phi = [0.0] * k
    int_psi = [0.0] * k
    wc_viol = 0
    np_viol = 0
    events = 0

    def apply_policy(now: float) -> int:
        """Reassign servers; returns 1 if a routing count went down."""
        nonlocal phi, psi
        if preemptive:
            X = [a + b for a, b in zip(phi, psi)]
            target = [int(v) for v in decide(X)]
            if len(target) != k or sum(target) > n or any(t < 0 or t > x for t, x in zip(target, X)):
                raise PolicyContractViolation(f"t={now}: policy returned psi={target} for X={X}, n={n}")
            dec = 0
            for i in range(k):
                d = target[i] - psi[i]
                if d < 0:
                    dec = 1
                routed[i] += d
            psi = target
            phi = [x - t for x, t in zip(X, target)]
            return dec
        busy = sum(psi)
        while busy < n and any(phi):
            X = [a + b for a, b in zip(phi, psi)]
            i = decide(list(phi), X)
            if i is None or not 0 <= i < k or phi[i] <= 0:
                raise PolicyContractViolation(f"t={now}: policy picked class {i} with phi={phi}")
            phi[i] -= 1
            psi[i] += 1
            routed[i] += 1
            busy += 1
        return 0

    def running_cost() -> float:
        if zero_cost:
            return 0.0
        return ltil([f / sn for f in phi], [(p - c) / sn for p, c in zip(psi, center)])

    g_cache: dict[tuple[int, ...], float] = {}
    poisson = [smp.family == EXPONENTIAL and not math.isinf(smp.mean) for smp in samplers]
    lam = [1.0 / smp.mean if p else 0.0 for smp, p in zip(samplers, poisson)]

    def g_at(X: tuple[int, ...]) -> float:
        v = g_cache.get(X)
        if v is None:
            v = float(control([(a - c) / sn for a, c in zip(X, center)]))
            g_cache[X] = v
        return v

    def jump_table() -> tuple[list[float], list[float], float]:
        """Increments of g for one more / one fewer class-i customer, and the compensator density."""
        X = tuple(a + b for a, b in zip(phi, psi))
        g0 = g_at(X)
        up = [0.0] * k
        down = [0.0] * k
        dens = 0.0
        for i in range(k):
            if poisson[i]:
                up[i] = g_at(X[:i] + (X[i] + 1,) + X[i + 1:]) - g0
                dens += lam[i] * up[i]
            if X[i] > 0:
                down[i] = g_at(X[:i] + (X[i] - 1,) + X[i + 1:]) - g0
                dens += (mu[i] * psi[i] + th[i] * phi[i]) * down[i]
        return up, down, dens

    def tracked_value() -> float:
        xh = [(a + b - c) / sn for a, b, c in zip(phi, psi, center)]
        return float(track(xh, diagnostic_u(phi, n, [a + b for a, b in zip(phi, psi)])))

    np_viol += apply_policy(0.0)
    t = 0.0
    disc = 1.0
    total = 0.0
    tracked = 0.0
    Lval = running_cost()
    gval = tracked_value() if track is not None else 0.0
    cv = 0.0
    if control is not None:
        up, down, dens = jump_table()
    max_L = Lval

    while True:
        R = 0.0
        for i in range(k):
            R += th[i] * phi[i] + mu[i] * psi[i]
        t_clock = t + exps.next() / R if R > 0.0 else math.inf
        ia = 0
        ta = next_arr[0]
        for i in range(1, k):
            if next_arr[i] < ta:
                ta = next_arr[i]
                ia = i
        is_clock = t_clock <= ta
        t_next = t_clock if is_clock else ta
        stop = t_next >= horizon
        if stop:
            t_next = horizon
        dt = t_next - t
        disc_next = math.exp(-gamma * t_next)
        w = (disc - disc_next) / gamma
        total += Lval * w
        if track is not None:
            tracked += gval * w
        if control is not None:
            cv -= dens * w
        for i in range(k):
            int_phi[i] += phi[i] * dt
            int_psi[i] += psi[i] * dt
        t = t_next
        disc = disc_next
        if stop:
            break

        if is_clock:
            v = unis.next() * R
            j = -1
            for i in range(k):
                v -= th[i] * phi[i]
                if v < 0.0:
                    j = i
                    break
            if j >= 0:
                phi[j] -= 1
                cum_ab[j] += 1
                if control is not None:
                    cv += disc * down[j]
            else:
                for i in range(k):
                    v -= mu[i] * psi[i]
                    if v < 0.0:
                        j = i
                        break
                if j < 0:  # rounding at the top of the range
                    j = max(i for i in range(k) if psi[i] > 0)
                psi[j] -= 1
                cum_svc[j] += 1
                if control is not None:
                    cv += disc * down[j]
        else:
            cum_arr[ia] += 1
            phi[ia] += 1
            if control is not None and poisson[ia]:
                cv += disc * up[ia]
            next_arr[ia] = t + streams[ia].next()
        np_viol += apply_policy(t)
        events += 1

        # audits
        for i in range(k):
            if phi[i] < 0 or psi[i] < 0:
                raise InvariantBreach(f"t={t}: negative occupancy", _dump(t, phi, psi))
            if phi[i] + psi[i] != X0[i] + cum_arr[i] - cum_svc[i] - cum_ab[i]:
                raise InvariantBreach(f"t={t}: flow balance broken for class {i}", _dump(t, phi, psi))
            if routed[i] != psi[i] - psi0[i] + cum_svc[i]:
                raise InvariantBreach(f"t={t}: routing count inconsistent for class {i}", _dump(t, phi, psi))
        busy = sum(psi)
        if busy > n:
            raise InvariantBreach(f"t={t}: {busy} customers in service", _dump(t, phi, psi))
        if declares_wc and max(busy + sum(phi) - n, 0) != sum(phi):
            wc_viol += 1

        Lval = running_cost()
        if Lval > max_L:
            max_L = Lval
        if track is not None:
            gval = tracked_value()
        if control is not None:
            up, down, dens = jump_table()

    final = QueueState(phi=tuple(phi), psi=tuple(psi), now=t, next_arrival=tuple(next_arr),
                       cum_arrivals=tuple(cum_arr), cum_services=tuple(cum_svc),
                       cum_abandonments=tuple(cum_ab), cum_routed=tuple(routed),
                       int_phi=tuple(int_phi), int_psi=tuple(int_psi))
    tail = TAIL_SAFETY * max(max_L, 0.0) * math.exp(-gamma * horizon) / gamma
    return SimResult(discounted_cost=total, tail_bound=tail,
                     abandon_check=tuple((cum_ab[i], th[i] * int_phi[i]) for i in range(k)),
                     work_conservation_violations=wc_viol, nonpreemption_violations=np_viol,
                     event_count=events, final_state=final, seed=int(seed), horizon=float(horizon),
                     n=n, policy_id=policy.policy_id, cost_id=cost.cost_id,
                     tracked=tracked if track is not None else None, max_running_cost=max_L,
                     control_variate=cv if control is not None else None)


def _dump(t: float, phi, psi) -> dict:
    return {"t": t, "phi": list(phi), "psi": list(psi)}


@dataclass
class ReplicationSummary:
    mean_cost: float
    std_error: float
    costs: np.ndarray
    abandon_balance_se: tuple[float, ...]
    wc_violations: int
    np_violations: int
    events: int
    tail_bound: float
    results: list[SimResult] = field(default_factory=list, repr=False)
    tracked_mean: float | None = None
    tracked_se: float | None = None
    raw_mean: float | None = None
    raw_se: float | None = None


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0


def replicate(sys: SystemParams, policy: SchedulingPolicy, cost: CostSpec, horizon: float, reps: int,
              base_seed: int, *, keep_results: bool = False, **kwargs) -> ReplicationSummary:
    """Independent replications with seeds ``base_seed + j``, reduced in seed order.

    ``costs`` are the per-replication controlled costs (plain discounted
    costs unless a ``control`` function is passed through).
    ``abandon_balance_se`` holds, per class,
    ``|mean(R_i) - theta_i mean(int phi_i)|`` divided by the standard error
    of the per-replication difference.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    results = [run(sys, policy, cost, horizon, base_seed + j, **kwargs) for j in range(reps)]
    raw = np.array([r.discounted_cost for r in results])
    costs = np.array([r.controlled_cost for r in results])
    mean, se = _mean_se(costs)
    raw_mean, raw_se = _mean_se(raw)
    stats = []
    for i in range(sys.k):
        d = np.array([r.abandon_check[i][0] - r.abandon_check[i][1] for r in results])
        m, s = _mean_se(d)
        stats.append(0.0 if s == 0.0 else abs(m) / s)
    tm = ts = None
    if kwargs.get("track") is not None:
        tm, ts = _mean_se(np.array([r.tracked for r in results]))
    return ReplicationSummary(mean_cost=mean, std_error=se, costs=costs, abandon_balance_se=tuple(stats),
                              wc_violations=sum(r.work_conservation_violations for r in results),
                              np_violations=sum(r.nonpreemption_violations for r in results),
                              events=sum(r.event_count for r in results),
                              tail_bound=max(r.tail_bound for r in results),
                              results=results if keep_results else [], tracked_mean=tm, tracked_se=ts,
                              raw_mean=raw_mean, raw_se=raw_se)


def horizon_for(gamma: float, m_L: float, state_scale: float = 1.0, rel_tail: float = 1e-3, *,
                pilot_max: float = 1.0, pilot_horizon: float | None = None,
                safety: float = TAIL_SAFETY) -> float:
    """Simulation horizon whose truncated discounted tail is small.

    Picks the smallest ``T`` with
    ``safety * pilot_max * (1 + state_scale + T)^m_L * exp(-gamma T) <= rel_tail * pilot_max``,
    i.e. the tail is a ``rel_tail`` fraction of the running-cost scale.
    ``rel_tail >= 1`` returns the pilot horizon.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if pilot_horizon is None:
        pilot_horizon = 1.0 / gamma
    if rel_tail >= 1:
        return float(pilot_horizon)
    if rel_tail <= 0:
        raise ValueError("rel_tail must be positive")
    m = max(float(m_L), 0.0)

    def excess(T):
        return math.log(safety) + m * math.log1p(state_scale + T) - gamma * T - math.log(rel_tail)

    hi = pilot_horizon
    while excess(hi) > 0:
        hi *= 2.0
    if excess(pilot_horizon) <= 0:
        return float(pilot_horizon)
    return float(brentq(excess, pilot_horizon, hi, xtol=1e-10))
