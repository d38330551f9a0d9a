"""Scheduling policies of the n-th system.

Every policy here is a pure function of the current occupancy. The
preemptive policy returns a full service allocation ``psi`` after every
event; the nonpreemptive ones only choose which queue feeds a server
that has just become free.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .costs import CostSpec
from .errors import EmptyK0, NonConvexCost, NonIntegerTotal, ZeroTheta
from .params import LimitParams, SystemParams
from .policyfn import ConstantPolicy, MollifiedPolicy, PolicyFn
from .state import QueueState

PSCP = "PSCP"
NSCP1 = "NSCP1"
NSCP2 = "NSCP2"
STATIC_PRIORITY = "StaticPriority"
CMU = "CMu"
CMU_THETA = "CMuTheta"
KINDS = (PSCP, NSCP1, NSCP2, STATIC_PRIORITY, CMU, CMU_THETA)

TOTAL_TOL = 1e-9


def theta_round(y) -> np.ndarray:
    """Round a nonnegative vector with integer total to an integer vector.

    All but the last entry are floored and the last one absorbs the
    remainder, so the total is preserved and no entry moves by more than
    ``k``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if np.any(y < -TOTAL_TOL):
        raise ValueError(f"negative entry in {y.tolist()}")
    y = np.maximum(y, 0.0)
    total = math.fsum(y)
    target = round(total)
    if abs(total - target) > TOTAL_TOL * max(1.0, abs(total)):
        raise NonIntegerTotal(f"total {total!r} is not an integer")
    z = np.floor(y[:-1]).astype(np.int64)
    last = target - int(z.sum())
    return np.append(z, last).astype(np.int64)


def _theta_round_list(y: list[float], target: int) -> list[int]:
    z = [int(math.floor(v)) for v in y[:-1]]
    z.append(target - sum(z))
    return z


def priority_split(X, n: int, order: Sequence[int]) -> np.ndarray:
    """Fill ``n`` servers from the classes in ``order`` (0-based), each up to ``X_i``."""
    X = np.asarray(X, dtype=np.int64)
    psi = np.zeros_like(X)
    free = int(n)
    for i in order:
        take = min(int(X[i]), free)
        psi[i] = take
        free -= take
        if free == 0:
            break
    return psi


def _xhat(X: Sequence[int], center: Sequence[float], sqrt_n: float) -> list[float]:
    return [(a - c) / sqrt_n for a, c in zip(X, center)]


def _pscp_target(X: list[int], n: int, u: Sequence[float]) -> list[int]:
    excess = sum(X) - n
    if excess <= 0:
        return list(X)
    if min(X) >= excess:
        phi = _theta_round_list([excess * v for v in u], excess)
        if phi[-1] < 0:
            phi[-1] = 0  # only reachable through float noise in u
        if all(p <= x for p, x in zip(phi, X)) and sum(phi) == excess:
            return [x - p for x, p in zip(X, phi)]
    # fallback: higher class index served first
    psi = [0] * len(X)
    free = n
    for i in range(len(X) - 1, -1, -1):
        take = X[i] if X[i] < free else free
        psi[i] = take
        free -= take
    return psi


def p_scp_assign(state: QueueState, sys: SystemParams, h: PolicyFn) -> np.ndarray:
    """Target allocation ``psi`` of the preemptive policy at ``state``."""
    X = list(state.x)
    u = h.point(_xhat(X, sys.rho * sys.n, sys.sqrt_n))
    return np.array(_pscp_target(X, sys.n, u), dtype=np.int64)


def _nscp_pick(phi: list[int], X: list[int], n: int, u: Sequence[float]) -> int | None:
    if not any(phi):
        return None
    excess = sum(X) - n
    if excess < 0:
        excess = 0
    for i in range(len(phi) - 1, -1, -1):
        m = excess * u[i]
        if phi[i] >= (m if m > 1.0 else 1.0):
            return i
    raise EmptyK0(f"no class qualifies: phi={phi} X={X} u={tuple(u)}")


def n_scp_pick_class(state: QueueState, sys: SystemParams, h: PolicyFn) -> int | None:
    """Class (0-based) the nonpreemptive policy routes to a free server, or None."""
    X = list(state.x)
    if not any(state.phi):
        return None
    u = h.point(_xhat(X, sys.rho * sys.n, sys.sqrt_n))
    return _nscp_pick(list(state.phi), X, sys.n, u)


def diagnostic_u(phi: Sequence[int], n: int, X: Sequence[int] | None = None) -> tuple[float, ...]:
    """Realized queue split ``phi / (1.X - n)^+``; uniform when there is no excess."""
    k = len(phi)
    excess = (sum(X) if X is not None else sum(phi) + n) - n
    if excess <= 0:
        return (1.0 / k,) * k
    return tuple(p / excess for p in phi)


@dataclass
class SchedulingPolicy:
    """A named policy with the flags the simulator audits against.

    ``priority_order`` is 0-based with the most favored class first.
    """

    kind: str
    policy_fn: PolicyFn | None = None
    priority_order: tuple[int, ...] = ()
    coeffs: tuple[float, ...] = ()
    declares_work_conserving: bool = True
    declares_nonpreemptive: bool = True
    eps: float | None = None
    label: str = field(default="", repr=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind in (PSCP, NSCP1, NSCP2) and self.policy_fn is None:
            raise ValueError(f"{self.kind} needs a policy function")
        if self.priority_order:
            order = tuple(int(i) for i in self.priority_order)
            if sorted(order) != list(range(len(order))):
                raise ValueError(f"priority order {order} is not a permutation")
            self.priority_order = order

    @property
    def preemptive(self) -> bool:
        return not self.declares_nonpreemptive

    @property
    def policy_id(self) -> str:
        if self.label:
            return self.label
        if self.kind == PSCP:
            return "pscp"
        if self.kind == NSCP1:
            return "nscp1"
        if self.kind == NSCP2:
            return f"nscp2(eps={self.eps:.4g})"
        if self.kind == STATIC_PRIORITY:
            return "prio(" + ",".join(str(i + 1) for i in self.priority_order) + ")"
        return "cmu" if self.kind == CMU else "cmutheta"

    def bind(self, sys: SystemParams) -> Callable:
        """Fast closure used by the event loop.

        Preemptive kinds map ``X -> psi``; the others map
        ``(phi, X) -> class or None``. Both take and return plain lists.
        """
        n = sys.n
        sn = sys.sqrt_n
        center = (sys.rho * sys.n).tolist()
        if self.kind == PSCP:
            h = self.policy_fn

            def assign(X):
                return _pscp_target(X, n, h.point([(a - c) / sn for a, c in zip(X, center)]))

            return assign
        if self.kind in (NSCP1, NSCP2):
            h = self.policy_fn

            def pick(phi, X):
                if not any(phi):
                    return None
                return _nscp_pick(phi, X, n, h.point([(a - c) / sn for a, c in zip(X, center)]))

            return pick
        order = self._rank_order(sys)

        def pick_ranked(phi, X):
            for i in order:
                if phi[i] > 0:
                    return i
            return None

        return pick_ranked

    def _rank_order(self, sys: SystemParams) -> list[int]:
        k = sys.k
        if self.kind == STATIC_PRIORITY:
            return list(self.priority_order)
        c = np.asarray(self.coeffs if self.coeffs else (1.0,) * k, dtype=float)
        if self.kind == CMU:
            score = c * sys.mu_n
        else:
            if np.any(sys.theta_n <= 0):
                raise ZeroTheta("c-mu/theta rule needs every theta_i > 0")
            score = c * sys.mu_n / sys.theta_n
        # larger score first; ties go to the larger class index
        return sorted(range(k), key=lambda i: (-score[i], -i))

    def assign(self, state: QueueState, sys: SystemParams) -> np.ndarray:
        if not self.preemptive:
            raise TypeError(f"{self.policy_id} is nonpreemptive; use pick")
        return np.array(self.bind(sys)(list(state.x)), dtype=np.int64)

    def pick(self, state: QueueState, sys: SystemParams) -> int | None:
        if self.preemptive:
            raise TypeError(f"{self.policy_id} is preemptive; use assign")
        return self.bind(sys)(list(state.phi), list(state.x))


def p_scp_policy(h: PolicyFn) -> SchedulingPolicy:
    return SchedulingPolicy(PSCP, policy_fn=h, declares_nonpreemptive=False)


def n_scp1_policy(h: PolicyFn) -> SchedulingPolicy:
    return SchedulingPolicy(NSCP1, policy_fn=h)


def default_eps_rule(n: int) -> float:
    return float(n) ** -0.25


def n_scp2_policy(h: PolicyFn, n: int, eps_rule: Callable[[int], float] = default_eps_rule,
                  cost: CostSpec | None = None) -> SchedulingPolicy:
    """Nonpreemptive policy driven by the mollified ``h``.

    Refuses costs that are not convex in the allocation.
    """
    if cost is not None and not cost.convex_in_u:
        raise NonConvexCost(f"cost {cost.cost_id} is not flagged convex in u")
    eps = float(eps_rule(n))
    fn = h if isinstance(h, ConstantPolicy) else MollifiedPolicy(h, eps)
    return SchedulingPolicy(NSCP2, policy_fn=fn, eps=eps)


def static_priority(order: Sequence[int]) -> SchedulingPolicy:
    return SchedulingPolicy(STATIC_PRIORITY, priority_order=tuple(order))


def cmu_policy(coeffs: Sequence[float]) -> SchedulingPolicy:
    return SchedulingPolicy(CMU, coeffs=tuple(float(c) for c in coeffs))


def cmu_theta_policy(coeffs: Sequence[float], theta: Sequence[float] | None = None) -> SchedulingPolicy:
    if theta is not None and np.any(np.asarray(theta, dtype=float) <= 0):
        raise ZeroTheta("c-mu/theta rule needs every theta_i > 0")
    return SchedulingPolicy(CMU_THETA, coeffs=tuple(float(c) for c in coeffs))


def baseline_assign(state: QueueState, sys: SystemParams, kind: str,
                    order: Sequence[int] | None = None, coeffs: Sequence[float] | None = None) -> int | None:
    """Class picked by a baseline rule at ``state`` (0-based), or None if all queues are empty."""
    if kind == STATIC_PRIORITY:
        pol = static_priority(order if order is not None else range(sys.k - 1, -1, -1))
    elif kind == CMU:
        pol = cmu_policy(coeffs if coeffs is not None else (1.0,) * sys.k)
    elif kind == CMU_THETA:
        pol = cmu_theta_policy(coeffs if coeffs is not None else (1.0,) * sys.k, sys.theta_n)
    else:
        raise ValueError(f"{kind!r} is not a baseline kind")
    return pol.pick(state, sys)


_PRIO = re.compile(r"^prio\(([\d,\s]+)\)$")
_NSCP2 = re.compile(r"^nscp2(?:\(eps=([^)]+)\))?$")


def make_policy(descriptor: str, *, h: PolicyFn | None = None, n: int | None = None,
                cost: CostSpec | None = None, limits: LimitParams | None = None) -> SchedulingPolicy:
    """Build a policy from its CSV id, e.g. ``"pscp"``, ``"nscp2(eps=0.2)"`` or ``"prio(2,1)"``."""
    d = descriptor.strip().lower()
    if d == "pscp":
        return p_scp_policy(_need(h, d))
    if d == "nscp1":
        return n_scp1_policy(_need(h, d))
    m = _NSCP2.match(d)
    if m:
        if m.group(1) is not None:
            eps = float(m.group(1))
            return n_scp2_policy(_need(h, d), n or 1, lambda _n: eps, cost=cost)
        if n is None:
            raise ValueError("nscp2 without an explicit eps needs n")
        return n_scp2_policy(_need(h, d), n, cost=cost)
    m = _PRIO.match(d)
    if m:
        return static_priority([int(t) - 1 for t in m.group(1).split(",")])
    coeffs = tuple(cost.coeffs) if cost is not None and cost.coeffs else None
    if d == "cmu":
        return cmu_policy(coeffs or (1.0,) * (limits.k if limits else 1))
    if d == "cmutheta":
        return cmu_theta_policy(coeffs or (1.0,) * (limits.k if limits else 1),
                                limits.theta if limits is not None else None)
    raise ValueError(f"unknown policy descriptor {descriptor!r}")


def _need(h: PolicyFn | None, d: str) -> PolicyFn:
    if h is None:
        raise ValueError(f"policy {d!r} needs a solved policy function")
    return h
