"""Limiting parameters, the n-th system under QED scaling, and rescaling.

The n-th system realizes the heavy-traffic limits with exact equalities::

    lambda_n = n * lambda + sqrt(n) * lambda_hat
    mu_n     = mu + mu_hat / sqrt(n)
    theta_n  = theta
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import BalanceViolation, NegativeAbandonment, NonPositiveRate, RateUnderflow
from .state import QueueState

BALANCE_RTOL = 1e-12


def _frozen(values: Sequence[float] | np.ndarray, k: int | None = None, name: str = "") -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if k is not None and arr.size != k:
        raise ValueError(f"{name} has length {arr.size}, expected {k}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class LimitParams:
    """Limiting constants of the multiclass system.

    Vectors are per class; ``c2u`` is the squared coefficient of variation
    of the interarrival times and ``gamma`` the discount rate.
    """

    lam: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    lam_hat: np.ndarray
    mu_hat: np.ndarray
    c2u: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        k = np.size(self.lam)
        object.__setattr__(self, "lam", _frozen(self.lam, name="lambda"))
        for name in ("mu", "theta", "lam_hat", "mu_hat", "c2u"):
            object.__setattr__(self, name, _frozen(getattr(self, name), k, name))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def k(self) -> int:
        return int(self.lam.size)

    @property
    def rho(self) -> np.ndarray:
        return self.lam / self.mu

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LimitParams":
        k = len(d["lambda"])
        return cls(
            lam=d["lambda"],
            mu=d["mu"],
            theta=d.get("theta", [0.0] * k),
            lam_hat=d.get("lambda_hat", [0.0] * k),
            mu_hat=d.get("mu_hat", [0.0] * k),
            c2u=d.get("c2u", [1.0] * k),
            gamma=d.get("gamma", 1.0),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda": self.lam.tolist(),
            "mu": self.mu.tolist(),
            "theta": self.theta.tolist(),
            "lambda_hat": self.lam_hat.tolist(),
            "mu_hat": self.mu_hat.tolist(),
            "c2u": self.c2u.tolist(),
            "gamma": self.gamma,
        }


@dataclass(frozen=True, eq=False)
class SystemParams:
    """Rates of the n-th system."""

    n: int
    lam_n: np.ndarray
    mu_n: np.ndarray
    theta_n: np.ndarray
    rho: np.ndarray
    gamma: float | None = None

    def __post_init__(self) -> None:
        for name in ("lam_n", "mu_n", "theta_n", "rho"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def k(self) -> int:
        return int(self.lam_n.size)

    @property
    def sqrt_n(self) -> float:
        return math.sqrt(self.n)


@dataclass(frozen=True, eq=False)
class DiffusionCoeffs:
    """Coefficients of the limiting diffusion.

    ``r`` is the per-class noise intensity, ``ell`` the constant drift and
    ``beta`` the square-root staffing slack.
    """

    r: np.ndarray
    ell: np.ndarray
    beta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "r", _frozen(self.r))
        object.__setattr__(self, "ell", _frozen(self.ell))


def validate_limits(raw: LimitParams) -> LimitParams:
    if raw.gamma <= 0:
        raise NonPositiveRate(f"discount rate must be positive, got {raw.gamma}")
    if np.any(raw.lam <= 0) or np.any(raw.mu <= 0):
        raise NonPositiveRate(f"lambda={raw.lam.tolist()} mu={raw.mu.tolist()} must be positive")
    if np.any(raw.theta < 0):
        raise NegativeAbandonment(f"theta={raw.theta.tolist()} has a negative entry")
    if np.any(raw.c2u < 0):
        raise NonPositiveRate(f"c2u={raw.c2u.tolist()} has a negative entry")
    total = math.fsum(raw.rho)
    if abs(total - 1.0) > BALANCE_RTOL:
        raise BalanceViolation(f"sum of lambda_i/mu_i is {total!r}, must equal 1")
    return raw


def build_system(limits: LimitParams, n: int) -> SystemParams:
    if n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    sn = math.sqrt(n)
    lam_n = n * limits.lam + sn * limits.lam_hat
    mu_n = limits.mu + limits.mu_hat / sn
    if np.any(lam_n <= 0) or np.any(mu_n <= 0):
        raise RateUnderflow(f"n={n}: lambda_n={lam_n.tolist()} mu_n={mu_n.tolist()}")
    return SystemParams(n=int(n), lam_n=lam_n, mu_n=mu_n, theta_n=limits.theta.copy(), rho=limits.rho,
                        gamma=float(limits.gamma))


def diffusion_coeffs(limits: LimitParams) -> DiffusionCoeffs:
    rho = limits.rho
    r = np.sqrt(limits.lam * limits.c2u + limits.lam)
    ell = limits.lam_hat - rho * limits.mu_hat
    beta = float(np.sum((rho * limits.mu_hat - limits.lam_hat) / limits.mu))
    return DiffusionCoeffs(r=r, ell=ell, beta=beta)


def traffic_slack(sys: SystemParams) -> float:
    """Finite-n staffing slack ``sqrt(n) * (1 - rho_n)``."""
    rho_n = float(np.sum(sys.lam_n / (sys.n * sys.mu_n)))
    return sys.sqrt_n * (1.0 - rho_n)


def rescale_state(state: QueueState, sys: SystemParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Diffusion-scale coordinates ``(x_hat, phi_hat, psi_hat)`` of a state."""
    phi, psi = state.as_arrays()
    sn = sys.sqrt_n
    phi_hat = phi / sn
    psi_hat = (psi - sys.rho * sys.n) / sn
    return phi_hat + psi_hat, phi_hat, psi_hat


def initial_state_for(x: Sequence[float], sys: SystemParams) -> QueueState:
    """Integer initial state whose diffusion-scale image approximates ``x``.

    Totals are rounded to the nearest integer. Any excess over ``n`` is put
    in the queues by rounding an equal-fraction split, which keeps the
    state work conserving.
    """
    from .policies import priority_split, theta_round

    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != sys.k:
        raise ValueError(f"x has dimension {x.size}, system has {sys.k} classes")
    total = np.rint(sys.rho * sys.n + sys.sqrt_n * x)
    X = np.maximum(total, 0).astype(np.int64)
    excess = int(X.sum()) - sys.n
    if excess <= 0:
        return QueueState(phi=(0,) * sys.k, psi=tuple(X.tolist()))
    phi = theta_round(np.full(sys.k, excess / sys.k))
    if np.any(phi > X):
        psi = priority_split(X, sys.n, order=range(sys.k - 1, -1, -1))
        phi = X - psi
    return QueueState(phi=tuple(phi.tolist()), psi=tuple((X - phi).tolist()))
