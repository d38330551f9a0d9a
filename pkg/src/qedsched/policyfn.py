"""Markov policies ``x -> u`` mapping diffusion-scale states to the simplex.

Every policy supports two call styles: ``h(X)`` on an array with classes
on the last axis (used by the PDE and SDE code), and ``h.point(x)`` on a
single state returning a tuple (used inside the event loop, where numpy
call overhead dominates).
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyStencil


def project_simplex(u: np.ndarray) -> np.ndarray:
    """Clamp negatives to zero and renormalize along the last axis."""
    u = np.maximum(np.asarray(u, dtype=float), 0.0)
    s = u.sum(axis=-1, keepdims=True)
    k = u.shape[-1]
    return np.where(s > 0, u / np.where(s > 0, s, 1.0), 1.0 / k)


def _project_point(u: list[float]) -> tuple[float, ...]:
    u = [v if v > 0.0 else 0.0 for v in u]
    s = sum(u)
    if s <= 0.0:
        return (1.0 / len(u),) * len(u)
    return tuple(v / s for v in u)


class PolicyFn:
    """Base class; subclasses implement ``_eval`` on 2-D arrays."""

    k: int

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.k)
        out = self._eval(flat)
        return out.reshape(x.shape)

    def point(self, x: Sequence[float]) -> tuple[float, ...]:
        return tuple(self._eval(np.asarray(x, dtype=float).reshape(1, self.k))[0].tolist())

    def _eval(self, x: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError


class ConstantPolicy(PolicyFn):
    def __init__(self, u: Sequence[float]):
        self.u = tuple(float(v) for v in project_simplex(np.asarray(u, dtype=float)))
        self.k = len(self.u)

    def _eval(self, x):
        return np.broadcast_to(np.asarray(self.u), x.shape).copy()

    def point(self, x):
        return self.u


class CallablePolicy(PolicyFn):
    """Wrap a vectorized function ``X (N, k) -> U (N, k)``."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], k: int):
        self.fn = fn
        self.k = k

    def _eval(self, x):
        return project_simplex(self.fn(x))


class GridPolicy(PolicyFn):
    """Multilinear interpolation of node policies on ``[-B, B]^k``.

    States outside the box take the policy of the nearest boundary node.
    """

    def __init__(self, halfwidth: float, points: int, table: np.ndarray):
        self.B = float(halfwidth)
        self.M = int(points)
        self.k = table.shape[-1]
        self.dx = 2.0 * self.B / (self.M - 1)
        self.table = np.asarray(table, dtype=float).reshape(-1, self.k)
        self._rows = [tuple(r) for r in self.table.tolist()]
        self._strides = [self.M ** (self.k - 1 - j) for j in range(self.k)]
        self._corners = list(itertools.product((0, 1), repeat=self.k))

    def _eval(self, x):
        B, M, dx = self.B, self.M, self.dx
        outside = np.any(np.abs(x) > B, axis=1)
        t = (np.clip(x, -B, B) + B) / dx
        snapped = np.rint(t)
        t = np.where(outside[:, None], snapped, t)
        i0 = np.minimum(np.floor(t).astype(np.int64), M - 2)
        w = t - i0
        out = np.zeros_like(x)
        for corner in self._corners:
            c = np.asarray(corner)
            idx = ((i0 + c) * self._strides).sum(axis=1)
            wt = np.prod(np.where(c == 1, w, 1.0 - w), axis=1)
            out += wt[:, None] * self.table[idx]
        return project_simplex(out)

    def point(self, x):
        B, M, dx = self.B, self.M, self.dx
        outside = any(v > B or v < -B for v in x)
        i0 = []
        w = []
        for v in x:
            t = (min(max(v, -B), B) + B) / dx
            if outside:
                t = float(round(t))
            i = int(t)
            if i > M - 2:
                i = M - 2
            i0.append(i)
            w.append(t - i)
        base = sum(i * s for i, s in zip(i0, self._strides))
        acc = [0.0] * self.k
        rows = self._rows
        strides = self._strides
        for corner in self._corners:
            wt = 1.0
            off = base
            for cj, wj, sj in zip(corner, w, strides):
                if cj:
                    wt *= wj
                    off += sj
                else:
                    wt *= 1.0 - wj
            if wt != 0.0:
                row = rows[off]
                for j in range(self.k):
                    acc[j] += wt * row[j]
        return _project_point(acc)


class MollifiedPolicy(PolicyFn):
    """Distance-weighted lattice average of a base policy.

    ``h_eps(x) = sum_y d(y) h(y) / sum_y d(y)`` over lattice points
    ``y`` in ``eps * Z^k`` inside the open ball of radius ``eps * sqrt(k)``
    around ``x``, where ``d(y)`` is the distance from ``y`` to the ball's
    boundary. The result is locally Lipschitz even when ``h`` jumps.
    """

    def __init__(self, base: PolicyFn, eps: float):
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.base = base
        self.eps = float(eps)
        self.k = base.k
        self.radius = self.eps * math.sqrt(self.k)
        reach = int(math.ceil(math.sqrt(self.k))) + 1
        self._offsets = np.array(list(itertools.product(range(-reach, reach + 1), repeat=self.k)))
        self._cache: dict[tuple[int, ...], tuple[float, ...]] = {}

    def _eval(self, x):
        eps, R = self.eps, self.radius
        anchor = np.floor(x / eps)
        num = np.zeros_like(x)
        den = np.zeros(x.shape[0])
        for off in self._offsets:
            y = (anchor + off) * eps
            d = R - np.sqrt(np.sum((x - y) ** 2, axis=1))
            inside = d > 0
            if not inside.any():
                continue
            wt = np.where(inside, d, 0.0)
            num[inside] += wt[inside, None] * self.base(y[inside])
            den += wt
        if np.any(den <= 0):
            raise EmptyStencil("lattice ball contains no points")
        return project_simplex(num / den[:, None])

    def _h_lattice(self, idx: tuple[int, ...]) -> tuple[float, ...]:
        u = self._cache.get(idx)
        if u is None:
            u = self.base.point([i * self.eps for i in idx])
            self._cache[idx] = u
        return u

    def point(self, x):
        eps, R = self.eps, self.radius
        ranges = [range(math.ceil((v - R) / eps), math.floor((v + R) / eps) + 1) for v in x]
        num = [0.0] * self.k
        den = 0.0
        for idx in itertools.product(*ranges):
            d2 = 0.0
            for i, v in zip(idx, x):
                dv = v - i * eps
                d2 += dv * dv
            d = R - math.sqrt(d2)
            if d <= 0.0:
                continue
            u = self._h_lattice(idx)
            den += d
            for j in range(self.k):
                num[j] += d * u[j]
        if den <= 0.0:
            raise EmptyStencil("lattice ball contains no points")
        return _project_point([v / den for v in num])
