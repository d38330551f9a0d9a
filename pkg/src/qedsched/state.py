"""Integer queue state of the n-th system."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _zeros_int(k: int) -> tuple[int, ...]:
    return (0,) * k


@dataclass
class QueueState:
    """Snapshot of the n-th system.

    ``phi`` counts customers waiting per class and ``psi`` customers in
    service. The cumulative counters and occupation integrals are only
    populated by the simulator; a freshly built state has them at zero.
    """

    phi: tuple[int, ...]
    psi: tuple[int, ...]
    now: float = 0.0
    next_arrival: tuple[float, ...] | None = None
    cum_arrivals: tuple[int, ...] = ()
    cum_services: tuple[int, ...] = ()
    cum_abandonments: tuple[int, ...] = ()
    cum_routed: tuple[int, ...] = ()
    int_phi: tuple[float, ...] = ()
    int_psi: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        self.phi = tuple(int(v) for v in self.phi)
        self.psi = tuple(int(v) for v in self.psi)
        if len(self.phi) != len(self.psi):
            raise ValueError("phi and psi must have the same length")
        k = len(self.phi)
        for name in ("cum_arrivals", "cum_services", "cum_abandonments", "cum_routed"):
            if not getattr(self, name):
                setattr(self, name, _zeros_int(k))
        for name in ("int_phi", "int_psi"):
            if not getattr(self, name):
                setattr(self, name, (0.0,) * k)

    @property
    def k(self) -> int:
        return len(self.phi)

    @property
    def x(self) -> tuple[int, ...]:
        return tuple(a + b for a, b in zip(self.phi, self.psi))

    def check(self, n: int) -> None:
        """Raise ``ValueError`` unless the occupancy constraints hold."""
        if min(self.phi) < 0 or min(self.psi) < 0:
            raise ValueError(f"negative occupancy: phi={self.phi} psi={self.psi}")
        if sum(self.psi) > n:
            raise ValueError(f"{sum(self.psi)} customers in service with {n} servers")

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.phi, dtype=np.int64), np.array(self.psi, dtype=np.int64)
