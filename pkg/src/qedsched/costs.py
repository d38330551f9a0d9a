"""Running costs on the diffusion-scale queue and service occupancies.

A cost is described by a :class:`CostSpec`. ``eval_Ltilde`` evaluates it on
``(phi_hat, psi_hat)``; ``eval_L`` evaluates the induced cost of a state
``x`` when the total queue ``(1.x)^+`` is split across classes by ``u``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import NegativeQueue, SimplexViolation, UnsupportedSpec

KINDS = ("PowerQueue", "LinearQueue", "Abandonment", "Idling", "CustomersInSystem", "WeightedSum")
QUEUE_TOL = 1e-9
SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class CostSpec:
    """Cost descriptor.

    ``coeffs`` are per-class weights, except for ``WeightedSum`` where they
    weight the entries of ``terms``. ``theta`` is only read by
    ``Abandonment``. ``growth_degree`` is the declared polynomial growth
    exponent of the induced cost.
    """

    kind: str
    coeffs: tuple[float, ...] = ()
    powers: tuple[float, ...] = ()
    theta: tuple[float, ...] = ()
    terms: tuple["CostSpec", ...] = ()
    growth_degree: int | None = None
    scale: str = "diffusion"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise UnsupportedSpec(f"unknown cost kind {self.kind!r}")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        object.__setattr__(self, "powers", tuple(float(p) for p in self.powers))
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.kind == "WeightedSum":
            if not self.terms:
                raise UnsupportedSpec("WeightedSum needs at least one term")
            if not self.coeffs:
                object.__setattr__(self, "coeffs", (1.0,) * len(self.terms))
            if len(self.coeffs) != len(self.terms):
                raise UnsupportedSpec("WeightedSum needs one weight per term")
        if self.kind != "CustomersInSystem" and any(c < 0 for c in self.coeffs):
            raise UnsupportedSpec(f"{self.kind} coefficients must be nonnegative")
        if self.kind == "PowerQueue":
            if len(self.powers) != len(self.coeffs):
                raise UnsupportedSpec("PowerQueue needs one power per coefficient")
            if any(p < 1 for p in self.powers):
                raise UnsupportedSpec("PowerQueue powers must be >= 1")
        if self.kind == "Abandonment" and len(self.theta) != len(self.coeffs):
            raise UnsupportedSpec("Abandonment cost needs theta for every class")
        if self.kind == "CustomersInSystem" and self.scale != "diffusion":
            raise UnsupportedSpec("CustomersInSystem is only defined with scale: diffusion")
        natural = _natural_degree(self)
        if self.growth_degree is None:
            object.__setattr__(self, "growth_degree", natural)
        elif self.growth_degree < natural:
            raise UnsupportedSpec(f"declared growth degree {self.growth_degree} < {natural}")

    # -- flags -----------------------------------------------------------
    @property
    def smooth_policy_expected(self) -> bool:
        """Strictly convex separable power cost: the optimal policy is Hölder."""
        return (
            self.kind == "PowerQueue"
            and all(p >= 2 for p in self.powers)
            and all(c > 0 for c in self.coeffs)
        )

    @property
    def convex_in_u(self) -> bool:
        return True

    @property
    def is_zero(self) -> bool:
        if self.kind == "WeightedSum":
            return all(w == 0 or t.is_zero for w, t in zip(self.coeffs, self.terms))
        if self.kind == "Idling":
            return False
        if self.kind == "Abandonment":
            return all(c * t == 0 for c, t in zip(self.coeffs, self.theta))
        return all(c == 0 for c in self.coeffs)

    # -- identity --------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind}
        if self.coeffs:
            d["coeffs"] = list(self.coeffs)
        if self.powers:
            d["powers"] = list(self.powers)
        if self.theta:
            d["theta"] = list(self.theta)
        if self.terms:
            d["terms"] = [t.to_dict() for t in self.terms]
        d["growth_degree"] = self.growth_degree
        d["scale"] = self.scale
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], theta: Sequence[float] | None = None) -> "CostSpec":
        kind = d["kind"]
        terms = tuple(cls.from_dict(t, theta) for t in d.get("terms", ()))
        th = d.get("theta")
        if th is None and kind == "Abandonment" and theta is not None:
            th = theta
        return cls(
            kind=kind,
            coeffs=tuple(d.get("coeffs", ())),
            powers=tuple(d.get("powers", ())),
            theta=tuple(th or ()),
            terms=terms,
            growth_degree=d.get("growth_degree"),
            scale=d.get("scale", "diffusion"),
        )

    @property
    def cost_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def cost_id(self) -> str:
        fmt = lambda v: ",".join(f"{x:g}" for x in v)
        if self.kind == "PowerQueue":
            return f"powerq(c={fmt(self.coeffs)};p={fmt(self.powers)})"
        if self.kind == "WeightedSum":
            return "sum(" + "+".join(f"{w:g}*{t.cost_id}" for w, t in zip(self.coeffs, self.terms)) + ")"
        short = {"LinearQueue": "linq", "Abandonment": "aband", "Idling": "idle", "CustomersInSystem": "insys"}
        return f"{short[self.kind]}(c={fmt(self.coeffs)})" if self.coeffs else short[self.kind]


def _natural_degree(spec: CostSpec) -> int:
    if spec.kind == "PowerQueue":
        return int(math.ceil(max(spec.powers))) if spec.powers else 1
    if spec.kind == "WeightedSum":
        return max(t.growth_degree for t in spec.terms)
    return 1


def zero_cost(k: int) -> CostSpec:
    return CostSpec("LinearQueue", coeffs=(0.0,) * k)


def power_queue(coeffs: Sequence[float], powers: Sequence[float] | float = 2.0) -> CostSpec:
    if np.isscalar(powers):
        powers = [powers] * len(coeffs)
    return CostSpec("PowerQueue", coeffs=tuple(coeffs), powers=tuple(powers))


def linear_queue(coeffs: Sequence[float]) -> CostSpec:
    return CostSpec("LinearQueue", coeffs=tuple(coeffs))


def abandonment(coeffs: Sequence[float], theta: Sequence[float]) -> CostSpec:
    return CostSpec("Abandonment", coeffs=tuple(coeffs), theta=tuple(theta))


def idling() -> CostSpec:
    return CostSpec("Idling")


def delay(coeffs: Sequence[float]) -> CostSpec:
    """Discounted per-customer waiting cost; equal to a linear queue cost."""
    return linear_queue(coeffs)


# -- evaluation --------------------------------------------------------------


def _ltilde(spec: CostSpec, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    kind = spec.kind
    if kind == "PowerQueue":
        c = np.asarray(spec.coeffs)
        p = np.asarray(spec.powers)
        return np.sum(c * phi**p, axis=-1)
    if kind == "LinearQueue":
        return phi @ np.asarray(spec.coeffs)
    if kind == "Abandonment":
        return phi @ (np.asarray(spec.coeffs) * np.asarray(spec.theta))
    if kind == "Idling":
        return np.maximum(-np.sum(psi, axis=-1), 0.0)
    if kind == "CustomersInSystem":
        return (phi + psi) @ np.asarray(spec.coeffs)
    out = 0.0
    for w, term in zip(spec.coeffs, spec.terms):
        out = out + w * _ltilde(term, phi, psi)
    return out


def eval_Ltilde(spec: CostSpec, phi_hat, psi_hat):
    """Running cost as a function of scaled queue and service occupancies.

    Accepts single vectors or arrays with classes on the last axis.
    """
    phi = np.asarray(phi_hat, dtype=float)
    psi = np.asarray(psi_hat, dtype=float)
    if np.any(phi < -QUEUE_TOL):
        raise NegativeQueue(f"negative scaled queue length {phi.min():.3g}")
    out = _ltilde(spec, np.maximum(phi, 0.0), psi)
    return float(out) if np.ndim(out) == 0 else out


def check_simplex(u: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    if np.any(u < -tol) or np.any(np.abs(np.sum(u, axis=-1) - 1.0) > tol):
        raise SimplexViolation(f"control is not in the simplex: {np.asarray(u).tolist()!r:.200}")


def L_unchecked(spec: CostSpec, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    s = np.maximum(np.sum(x, axis=-1), 0.0)[..., None]
    phi = np.maximum(s * u, 0.0)
    return _ltilde(spec, phi, x - phi)


def eval_L(spec: CostSpec, x_hat, u):
    """Induced cost ``L(x, u) = Ltilde((1.x)^+ u, x - (1.x)^+ u)``."""
    x = np.asarray(x_hat, dtype=float)
    u = np.asarray(u, dtype=float)
    check_simplex(u)
    out = L_unchecked(spec, x, u)
    return float(out) if np.ndim(out) == 0 else out


def local_holder_bound(spec: CostSpec, box_radius: float, k: int | None = None) -> tuple[float, float]:
    """Lipschitz constant of ``x -> L(x, u)`` on ``[-R, R]^k``, uniform in u.

    The constant bounds the l1 norm of the x-gradient, so it is valid for
    the l1, l2 and sup distances alike. The exponent is always 1.
    """
    if k is None:
        k = _infer_k(spec)
    R = float(box_radius)
    kind = spec.kind
    if kind == "LinearQueue":
        c = k * max(spec.coeffs)
    elif kind == "PowerQueue":
        c = k * max(ci * p * (k * R) ** (p - 1) for ci, p in zip(spec.coeffs, spec.powers))
    elif kind == "Abandonment":
        c = k * max(ci * t for ci, t in zip(spec.coeffs, spec.theta))
    elif kind == "Idling":
        c = float(k)
    elif kind == "CustomersInSystem":
        c = float(np.sum(np.abs(spec.coeffs)))
    elif kind == "WeightedSum":
        c = 0.0
        for w, term in zip(spec.coeffs, spec.terms):
            if term.kind not in KINDS:
                raise UnsupportedSpec(f"term {term.kind!r} is not a catalog cost")
            c += w * local_holder_bound(term, R, k)[0]
    else:  # pragma: no cover - guarded by CostSpec
        raise UnsupportedSpec(kind)
    return float(c), 1.0


def growth_bound(spec: CostSpec) -> tuple[float, int]:
    """Constants ``(c, m)`` with ``L(x, u) <= c (1 + ||x||_1^m)``."""
    kind = spec.kind
    m = spec.growth_degree
    if kind in ("LinearQueue", "PowerQueue"):
        c = sum(spec.coeffs)
    elif kind == "Abandonment":
        c = sum(ci * t for ci, t in zip(spec.coeffs, spec.theta))
    elif kind == "Idling":
        c = 1.0
    elif kind == "CustomersInSystem":
        c = max(abs(ci) for ci in spec.coeffs)
    else:
        c = sum(w * growth_bound(t)[0] for w, t in zip(spec.coeffs, spec.terms))
    return float(max(c, 0.0)), int(m)


def _infer_k(spec: CostSpec) -> int:
    if spec.kind == "WeightedSum":
        return _infer_k(spec.terms[0])
    if not spec.coeffs:
        raise UnsupportedSpec(f"cannot infer class count for {spec.kind}; pass k")
    return len(spec.coeffs)


def scalar_ltilde(spec: CostSpec) -> Callable[[Sequence[float], Sequence[float]], float]:
    """Pure-Python evaluator of the running cost for the event loop."""
    kind = spec.kind
    c = spec.coeffs
    if kind == "PowerQueue":
        cp = tuple(zip(c, spec.powers))
        if all(p == 2.0 for p in spec.powers):
            return lambda phi, psi: sum(ci * f * f for ci, f in zip(c, phi))
        return lambda phi, psi: sum(ci * f**p for (ci, p), f in zip(cp, phi))
    if kind == "LinearQueue":
        return lambda phi, psi: sum(ci * f for ci, f in zip(c, phi))
    if kind == "Abandonment":
        ct = tuple(ci * t for ci, t in zip(c, spec.theta))
        return lambda phi, psi: sum(ci * f for ci, f in zip(ct, phi))
    if kind == "Idling":
        return lambda phi, psi: max(-sum(psi), 0.0)
    if kind == "CustomersInSystem":
        return lambda phi, psi: sum(ci * (f + g) for ci, f, g in zip(c, phi, psi))
    parts = [(w, scalar_ltilde(t)) for w, t in zip(spec.coeffs, spec.terms)]
    return lambda phi, psi: sum(w * fn(phi, psi) for w, fn in parts)
