"""HJB equation of the limiting diffusion control problem.

Solves ``(1/2) sum_i r_i^2 f_ii + H(x, Df) - gamma f = 0`` on the box
``[-B, B]^k`` by policy iteration, where

    H(x, p) = min_{u in simplex} [ b(x, u) . p + L(x, u) ]
    b(x, u) = ell + (mu - theta) (1.x)^+ u - mu x

The drift is discretized with the least artificial diffusion that keeps
the scheme monotone: central differences where the cell Peclet number
allows it, one-sided upwind differences elsewhere. At faces the normal
second derivative is set to zero and outward drift is dropped.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_bvp

from .costs import CostSpec, L_unchecked, check_simplex, growth_bound
from .errors import NoConvergence, NonMonotoneScheme, SingularLinearSystem
from .params import DiffusionCoeffs, LimitParams
from .policyfn import GridPolicy, MollifiedPolicy, PolicyFn

DEFAULT_SIMPLEX_RESOLUTION = 20
POLISH_ITERS = 20


@dataclass(frozen=True)
class GridSpec:
    box_halfwidth: float = 5.0
    points_per_axis: int = 81
    simplex_resolution: int = DEFAULT_SIMPLEX_RESOLUTION
    tol_residual: float = 1e-6
    max_policy_iters: int = 60
    scheme: str = "corrected"

    def __post_init__(self) -> None:
        if self.box_halfwidth <= 0:
            raise ValueError("box_halfwidth must be positive")
        if self.points_per_axis < 16:
            raise ValueError("points_per_axis must be at least 16")
        if self.simplex_resolution < 2:
            raise ValueError("simplex_resolution must be at least 2")
        if self.scheme not in ("hybrid", "corrected"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def dx(self) -> float:
        return 2.0 * self.box_halfwidth / (self.points_per_axis - 1)

    def axis(self) -> np.ndarray:
        return np.linspace(-self.box_halfwidth, self.box_halfwidth, self.points_per_axis)

    def doubled(self) -> "GridSpec":
        """Box of twice the half-width with the same spacing."""
        return GridSpec(
            box_halfwidth=2 * self.box_halfwidth,
            points_per_axis=2 * self.points_per_axis - 1,
            simplex_resolution=self.simplex_resolution,
            tol_residual=self.tol_residual,
            max_policy_iters=self.max_policy_iters,
            scheme=self.scheme,
        )

    @classmethod
    def from_dict(cls, d) -> "GridSpec":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class ValueGrid:
    """Solved value function and policy on the grid nodes.

    ``values`` has shape ``(M,)*k``, ``policy`` shape ``(M,)*k + (k,)`` and
    ``residual`` holds the pointwise central-difference HJB defect (NaN on
    the faces, where the central stencil is unavailable).
    """

    spec: GridSpec
    k: int
    values: np.ndarray
    policy: np.ndarray
    residual: np.ndarray
    cost_hash: str = ""
    iterations: int = 0
    history: list[tuple[float, float]] = field(default_factory=list)
    growth_const: float = float("nan")

    def nodes(self) -> np.ndarray:
        return _nodes(self.spec, self.k)


def simplex_mesh(k: int, resolution: int) -> np.ndarray:
    """Points of the simplex with coordinates in ``{0, 1/S, ..., 1}``.

    Ordered so that ``e_1`` comes first, then ``(S-1, 1, 0...)/S`` and so
    on; ``argmin`` ties resolve to the earliest point.
    """
    S = int(resolution)
    pts = [c for c in itertools.product(range(S, -1, -1), repeat=k - 1) if sum(c) <= S]
    mesh = np.array([list(c) + [S - sum(c)] for c in pts], dtype=float) / S
    return mesh


def drift(x, u, coeffs: DiffusionCoeffs, limits: LimitParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    s = np.maximum(np.sum(x, axis=-1), 0.0)[..., None]
    return coeffs.ell + (limits.mu - limits.theta) * s * u - limits.mu * x


def _pattern_search(obj: Callable[[np.ndarray], np.ndarray], U: np.ndarray, val: np.ndarray,
                    step0: float, iters: int = POLISH_ITERS) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise coordinate descent on the simplex; accepts strict improvements only."""
    U = U.copy()
    val = val.copy()
    k = U.shape[1]
    pairs = list(itertools.combinations(range(k), 2))
    step = np.full(U.shape[0], float(step0))
    for _ in range(iters):
        improved = np.zeros(U.shape[0], dtype=bool)
        for i, j in pairs:
            for sgn in (1.0, -1.0):
                t = np.clip(sgn * step, -U[:, i], U[:, j])
                V = U.copy()
                V[:, i] += t
                V[:, j] -= t
                cand = obj(V)
                better = cand < val
                if better.any():
                    U[better] = V[better]
                    val[better] = cand[better]
                    improved |= better
        step = np.where(improved, step, 0.5 * step)
    return U, val


def hamiltonian(x, p, cost: CostSpec, coeffs: DiffusionCoeffs, limits: LimitParams,
                resolution: int = DEFAULT_SIMPLEX_RESOLUTION, polish: bool | None = None):
    """Value and minimizer of ``u -> b(x, u).p + L(x, u)`` over the simplex.

    Works on single vectors or on arrays with classes on the last axis.
    The mesh minimum is refined by pairwise coordinate descent when the
    cost is strictly convex (or when ``polish`` is forced on).
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    single = x.ndim == 1
    X = x.reshape(-1, x.shape[-1])
    P = np.broadcast_to(p, x.shape).reshape(-1, x.shape[-1])
    k = X.shape[1]
    s = np.maximum(X.sum(axis=1), 0.0)
    base = np.sum((coeffs.ell - limits.mu * X) * P, axis=1)
    g = s[:, None] * (limits.mu - limits.theta) * P

    def obj(U):
        return base + np.sum(g * U, axis=1) + L_unchecked(cost, X, U)

    mesh = simplex_mesh(k, resolution) if k > 1 else np.ones((1, 1))
    best = np.full(X.shape[0], np.inf)
    arg = np.zeros((X.shape[0], k))
    for m in mesh:
        U = np.broadcast_to(m, X.shape)
        val = obj(U)
        upd = val < best
        best[upd] = val[upd]
        arg[upd] = m
    if polish is None:
        polish = cost.smooth_policy_expected
    if polish and k > 1:
        active = s > 0
        if active.any():
            sub_base, sub_g, sub_X = base[active], g[active], X[active]
            sub_obj = lambda U: sub_base + np.sum(sub_g * U, axis=1) + L_unchecked(cost, sub_X, U)
            Ua, va = _pattern_search(sub_obj, arg[active], best[active], 1.0 / resolution)
            arg[active] = Ua
            best[active] = va
    if single:
        return float(best[0]), arg[0]
    return best.reshape(x.shape[:-1]), arg.reshape(x.shape)


# -- grid machinery -----------------------------------------------------------


def _nodes(spec: GridSpec, k: int) -> np.ndarray:
    ax = spec.axis()
    mesh = np.meshgrid(*([ax] * k), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


class _Stencil:
    """Neighbor indices and face masks of a tensor grid (C order)."""

    def __init__(self, spec: GridSpec, k: int):
        M = spec.points_per_axis
        self.k = k
        self.M = M
        self.N = M**k
        self.dx = spec.dx
        idx = np.stack(np.unravel_index(np.arange(self.N), (M,) * k), axis=1)
        strides = np.array([M ** (k - 1 - j) for j in range(k)])
        self.lo = idx == 0
        self.hi = idx == M - 1
        node = np.arange(self.N)[:, None]
        self.plus = np.where(self.hi, node, node + strides)
        self.minus = np.where(self.lo, node, node - strides)
        self.interior = ~(self.lo | self.hi).any(axis=1)
        rows = [np.arange(self.N)]
        cols = [np.arange(self.N)]
        for j in range(k):
            rows += [np.arange(self.N), np.arange(self.N)]
            cols += [self.plus[:, j], self.minus[:, j]]
        self.rows = np.concatenate(rows)
        self.cols = np.concatenate(cols)

    def weights(self, b: np.ndarray, r: np.ndarray, rows=None, central: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Forward/backward neighbor weights of the discrete generator (optionally for a row subset).

        The default is the monotone hybrid; ``central=True`` gives plain
        central differences in the interior (possibly negative weights).
        """
        dx = self.dx
        D = 0.5 * r**2 / dx**2
        if central:
            ap = D + b / (2 * dx)
            am = D - b / (2 * dx)
        else:
            ap = np.maximum(np.maximum(D + b / (2 * dx), b / dx), 0.0)
            am = np.maximum(np.maximum(D - b / (2 * dx), -b / dx), 0.0)
        lo = self.lo if rows is None else self.lo[rows]
        hi = self.hi if rows is None else self.hi[rows]
        ap = np.where(lo, np.maximum(b, 0.0) / dx, np.where(hi, 0.0, ap))
        am = np.where(hi, np.maximum(-b, 0.0) / dx, np.where(lo, 0.0, am))
        return ap, am


def _assemble(st: _Stencil, ap: np.ndarray, am: np.ndarray, gamma: float) -> sp.csr_matrix:
    if np.any(ap < 0) or np.any(am < 0):
        raise NonMonotoneScheme("negative neighbor weight in discrete generator")
    diag = gamma + ap.sum(axis=1) + am.sum(axis=1)
    off = [x for j in range(st.k) for x in (-ap[:, j], -am[:, j])]
    data = np.concatenate([diag] + off)
    A = sp.csr_matrix((data, (st.rows, st.cols)), shape=(st.N, st.N))
    # self-loops at faces (plus == node) fold into the diagonal
    A.sum_duplicates()
    if not check_monotone(A, gamma):
        raise NonMonotoneScheme("matrix is not a strictly diagonally dominant M-matrix")
    return A


def check_monotone(A: sp.spmatrix, gamma: float) -> bool:
    """True when ``A`` has nonpositive off-diagonals and diagonal dominance ``>= gamma``."""
    C = A.tocoo()
    offdiag = C.row != C.col
    d = A.diagonal()
    offsum = np.bincount(C.row[offdiag], weights=np.abs(C.data[offdiag]), minlength=A.shape[0])
    return bool(np.all(C.data[offdiag] <= 0) and np.all(d - offsum >= gamma * (1 - 1e-12)))


def _solve(A: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    try:
        f = spla.spsolve(A.tocsc(), rhs)
    except RuntimeError as exc:  # pragma: no cover - SuperLU failure
        raise SingularLinearSystem(str(exc)) from exc
    if not np.all(np.isfinite(f)):
        raise SingularLinearSystem("linear solve produced non-finite values")
    return f


def _defect_corrected(st: _Stencil, A: sp.csr_matrix, ap, am, cp, cm, rhs: np.ndarray,
                      max_sweeps: int = 200, tol: float = 1e-13) -> np.ndarray:
    """Solve the central-difference system using the monotone matrix ``A`` as preconditioner.

    Iterates ``A f' = rhs + (A - A_c) f``; the perturbation is nonzero only
    on rows where the hybrid had to upwind. Falls back to the monotone
    solution if the iteration stalls or grows.
    """
    try:
        lu = spla.splu(A.tocsc())
    except RuntimeError as exc:  # pragma: no cover
        raise SingularLinearSystem(str(exc)) from exc
    f0 = lu.solve(rhs)
    dp, dm = cp - ap, cm - am
    rows = np.flatnonzero(np.any((np.abs(dp) > 0) | (np.abs(dm) > 0), axis=1))
    if rows.size == 0:
        return f0
    plus, minus = st.plus[rows], st.minus[rows]
    f = f0
    prev = math.inf
    for _ in range(max_sweeps):
        corr = np.zeros_like(rhs)
        corr[rows] = np.sum(dp[rows] * (f[plus] - f[rows, None]) + dm[rows] * (f[minus] - f[rows, None]), axis=1)
        f_new = lu.solve(rhs + corr)
        change = float(np.max(np.abs(f_new - f)))
        f = f_new
        if change <= tol * (1.0 + float(np.max(np.abs(f)))):
            return f
        if change > prev:
            break
        prev = change
    warnings.warn("defect correction did not settle; keeping the monotone solution", stacklevel=3)
    return f0


def assemble_policy_system(spec: GridSpec, U: np.ndarray, cost: CostSpec, coeffs: DiffusionCoeffs,
                           limits: LimitParams) -> tuple[sp.csr_matrix, np.ndarray]:
    """Matrix ``A`` and right-hand side with ``A f = L`` for a fixed policy."""
    k = U.shape[1]
    st = _Stencil(spec, k)
    X = _nodes(spec, k)
    b = drift(X, U, coeffs, limits)
    ap, am = st.weights(b, coeffs.r)
    return _assemble(st, ap, am, limits.gamma), L_unchecked(cost, X, U)


def solve_hjb(grid: GridSpec, cost: CostSpec, coeffs: DiffusionCoeffs, limits: LimitParams,
              initial_policy: np.ndarray | None = None) -> ValueGrid:
    """Policy iteration for the HJB equation on ``grid``.

    Each sweep solves the linear equation of the current policy, then
    replaces the policy node by node with the minimizer of the discrete
    generator applied to the new values (Jacobi style). The sweep stops
    once the values move by less than ``grid.tol_residual``.
    """
    k = limits.k
    if k > 3:
        warnings.warn(f"dense grids with k={k} are impractical; expect long run times", stacklevel=2)
    if limits.gamma <= 0:
        raise ValueError("discount rate must be positive")
    st = _Stencil(grid, k)
    X = _nodes(grid, k)
    s = np.maximum(X.sum(axis=1), 0.0)
    r = coeffs.r
    gamma = limits.gamma
    mesh = simplex_mesh(k, grid.simplex_resolution) if k > 1 else np.ones((1, 1))
    polish = cost.smooth_policy_expected and k > 1

    U = np.full((st.N, k), 1.0 / k) if initial_policy is None else np.asarray(initial_policy, float).reshape(st.N, k)
    check_simplex(U, 1e-10)

    corrected = grid.scheme == "corrected"

    def policy_eval(U):
        b = drift(X, U, coeffs, limits)
        ap, am = st.weights(b, r)
        A = _assemble(st, ap, am, gamma)
        rhs = L_unchecked(cost, X, U)
        if not corrected:
            return _solve(A, rhs)
        return _defect_corrected(st, A, ap, am, *st.weights(b, r, central=True), rhs)

    f = policy_eval(U)
    history: list[tuple[float, float]] = []
    delta = math.inf
    it = 0
    while it < grid.max_policy_iters:
        it += 1
        dfp = f[st.plus] - f[:, None]
        dfm = f[st.minus] - f[:, None]

        def obj(V, rows=None):
            sel = slice(None) if rows is None else rows
            b = drift(X[sel], V, coeffs, limits)
            ap, am = st.weights(b, r, rows, central=corrected)
            return np.sum(ap * dfp[sel] + am * dfm[sel], axis=1) + L_unchecked(cost, X[sel], V)

        old = obj(U)
        best = np.full(st.N, np.inf)
        arg = np.zeros_like(U)
        for m in mesh:
            val = obj(np.broadcast_to(m, U.shape))
            upd = val < best
            best[upd] = val[upd]
            arg[upd] = m
        if polish:
            active = np.flatnonzero(s > 0)
            if active.size:
                sub = lambda V: obj(V, active)
                Ua, va = _pattern_search(sub, arg[active], best[active], 1.0 / grid.simplex_resolution)
                arg[active] = Ua
                best[active] = va
        keep = ~(best < old - 1e-13 * (1.0 + np.abs(old)))
        arg[keep] = U[keep]
        U = arg
        f_new = policy_eval(U)
        delta = float(np.max(np.abs(f_new - f)))
        rise = float(np.max(f_new - f))
        history.append((delta, rise))
        f = f_new
        if delta < grid.tol_residual:
            break
    else:
        raise NoConvergence(f"policy iteration did not converge in {grid.max_policy_iters} sweeps", delta)

    shape = (grid.points_per_axis,) * k
    vg = ValueGrid(spec=grid, k=k, values=f.reshape(shape), policy=U.reshape(shape + (k,)),
                   residual=np.full(shape, np.nan), cost_hash=cost.cost_hash, iterations=it, history=history)
    vg.residual = hjb_defect(vg, cost, coeffs, limits)
    c_growth, m = growth_bound(cost)
    norm = np.abs(X).sum(axis=1)
    vg.growth_const = float(np.max(np.abs(f) / (1.0 + norm**m)))
    return vg


# -- diagnostics --------------------------------------------------------------


def central_derivatives(vg: ValueGrid) -> tuple[np.ndarray, np.ndarray]:
    """Central first and second differences at every node, shape ``(N, k)``.

    Face nodes get one-sided first differences and a zero second difference.
    """
    st = _Stencil(vg.spec, vg.k)
    f = vg.values.reshape(-1)
    fp, fm = f[st.plus], f[st.minus]
    width = np.where(st.lo | st.hi, 1.0, 2.0) * st.dx
    Df = (fp - fm) / width
    D2f = np.where(st.lo | st.hi, 0.0, (fp - 2 * f[:, None] + fm) / st.dx**2)
    return Df, D2f


def hjb_defect(vg: ValueGrid, cost: CostSpec, coeffs: DiffusionCoeffs, limits: LimitParams) -> np.ndarray:
    """Pointwise ``(1/2) sum r^2 f_ii + H(x, Df) - gamma f`` with central differences."""
    st = _Stencil(vg.spec, vg.k)
    X = _nodes(vg.spec, vg.k)
    f = vg.values.reshape(-1)
    Df, D2f = central_derivatives(vg)
    H, _ = hamiltonian(X, Df, cost, coeffs, limits, resolution=vg.spec.simplex_resolution)
    res = 0.5 * D2f @ coeffs.r**2 + H - limits.gamma * f
    res[~st.interior] = np.nan
    return res.reshape(vg.values.shape)


class ResidualReport(NamedTuple):
    max_interior_residual: float
    interior_fraction: float


def residual_report(vg: ValueGrid, cost: CostSpec, coeffs: DiffusionCoeffs, limits: LimitParams,
                    tol: float = 1e-2, collar: float = 0.1) -> ResidualReport:
    """Max HJB defect away from the faces and the fraction of nodes below ``tol``.

    Nodes within ``collar * 2B`` of a face are excluded.
    """
    res = np.abs(hjb_defect(vg, cost, coeffs, limits)).reshape(-1)
    X = vg.nodes()
    inner = vg.spec.box_halfwidth * (1.0 - 2.0 * collar)
    mask = np.all(np.abs(X) <= inner + 1e-12, axis=1)
    r = res[mask]
    return ResidualReport(float(np.max(r)), float(np.mean(r <= tol)))


def extract_policy_fn(vg: ValueGrid) -> GridPolicy:
    return GridPolicy(vg.spec.box_halfwidth, vg.spec.points_per_axis, vg.policy)


def mollify_policy(h: PolicyFn, eps: float) -> MollifiedPolicy:
    return MollifiedPolicy(h, eps)


def _multilinear(spec: GridSpec, table: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of ``table`` (N, m) at points ``x`` (P, k), clamped to the box."""
    k = x.shape[1]
    M, B, dx = spec.points_per_axis, spec.box_halfwidth, spec.dx
    t = (np.clip(x, -B, B) + B) / dx
    i0 = np.minimum(np.floor(t).astype(np.int64), M - 2)
    w = t - i0
    strides = np.array([M ** (k - 1 - j) for j in range(k)])
    out = np.zeros((x.shape[0],) + table.shape[1:])
    for corner in itertools.product((0, 1), repeat=k):
        c = np.asarray(corner)
        idx = ((i0 + c) * strides).sum(axis=1)
        wt = np.prod(np.where(c == 1, w, 1.0 - w), axis=1)
        out += wt.reshape((-1,) + (1,) * (table.ndim - 1)) * table[idx]
    return out


def value_fn(vg: ValueGrid) -> Callable[[np.ndarray], np.ndarray]:
    """Multilinear interpolant of the grid values (clamped to the box)."""
    table = vg.values.reshape(-1)

    def V(x):
        x = np.asarray(x, dtype=float)
        out = _multilinear(vg.spec, table, x.reshape(-1, vg.k))
        return float(out[0]) if x.ndim == 1 else out.reshape(x.shape[:-1])

    return V


def gradient_fn(vg: ValueGrid) -> Callable[[np.ndarray], np.ndarray]:
    """Multilinear interpolant of the central-difference gradient."""
    Df, _ = central_derivatives(vg)

    def G(x):
        x = np.asarray(x, dtype=float)
        out = _multilinear(vg.spec, Df, x.reshape(-1, vg.k))
        return out[0] if x.ndim == 1 else out.reshape(x.shape)

    return G


def domain_doubling_gap(vg: ValueGrid, cost: CostSpec, coeffs: DiffusionCoeffs, limits: LimitParams,
                        doubled: ValueGrid | None = None) -> float:
    """Max change of the values on ``[-B/2, B/2]^k`` when the box is doubled."""
    if doubled is None:
        doubled = solve_hjb(vg.spec.doubled(), cost, coeffs, limits)
    X = vg.nodes()
    inner = np.all(np.abs(X) <= vg.spec.box_halfwidth / 2 + 1e-12, axis=1)
    other = value_fn(doubled)(X[inner])
    return float(np.max(np.abs(vg.values.reshape(-1)[inner] - other)))


# -- independent k = 1 reference --------------------------------------------


def _particular_poly(coef_L: np.ndarray, alpha: float, slope: float, r2: float, gamma: float) -> np.ndarray:
    """Polynomial ``f`` solving ``r2/2 f'' + (alpha + slope x) f' - gamma f + P = 0``.

    ``coef_L`` holds the coefficients of ``P`` in increasing degree.
    """
    d = len(coef_L) - 1
    A = np.zeros((d + 1, d + 1))
    for m in range(d + 1):
        # image of x^m
        A[m, m] += slope * m - gamma
        if m >= 1:
            A[m - 1, m] += alpha * m
        if m >= 2:
            A[m - 2, m] += 0.5 * r2 * m * (m - 1)
    return np.linalg.solve(A, -np.asarray(coef_L, dtype=float))


def solve_k1_reference(cost: CostSpec, coeffs: DiffusionCoeffs, limits: LimitParams,
                       resolution: int = 2010, halfwidth: float = 6.0) -> Callable[[np.ndarray], np.ndarray]:
    """Value function of the single-class problem from a two-point BVP.

    With one class the simplex is a point, so the HJB equation is the
    linear ODE ``r^2/2 f'' + b(x) f' - gamma f + L(x) = 0``. It is solved by
    collocation on ``[-4B, 4B]`` with Dirichlet data taken from the
    polynomial particular solution on each half-line.
    """
    if limits.k != 1:
        raise ValueError("the reference solver is for a single class")
    gamma = limits.gamma
    r2 = float(coeffs.r[0] ** 2)
    ell = float(coeffs.ell[0])
    mu = float(limits.mu[0])
    theta = float(limits.theta[0])
    lo, hi = -4.0 * halfwidth, 4.0 * halfwidth
    one = np.ones((1, 1))

    def L(x):
        return L_unchecked(cost, np.asarray(x, float).reshape(-1, 1), one)

    def b(x):
        return ell + (mu - theta) * np.maximum(x, 0.0) - mu * x

    deg = max(1, int(cost.growth_degree))
    far = {}
    for side, (a0, a1, slope) in {"lo": (lo, 0.0, -mu), "hi": (0.0, hi, -theta)}.items():
        xs = np.linspace(a0, a1, 4 * deg + 8)
        cL = np.polynomial.polynomial.polyfit(xs, L(xs), deg)
        cf = _particular_poly(cL, ell, slope, r2, gamma)
        far[side] = float(np.polynomial.polynomial.polyval(lo if side == "lo" else hi, cf))

    def rhs(x, y):
        f, fp = y
        return np.vstack([fp, 2.0 * (gamma * f - b(x) * fp - L(x)) / r2])

    def bc(ya, yb):
        return np.array([ya[0] - far["lo"], yb[0] - far["hi"]])

    mesh = np.union1d(np.linspace(lo, hi, resolution), [0.0])
    y0 = np.zeros((2, mesh.size))
    sol = solve_bvp(rhs, bc, mesh, y0, tol=1e-9, max_nodes=200000)
    if not sol.success:
        raise NoConvergence(f"reference BVP failed: {sol.message}", float(np.max(sol.rms_residuals)))

    def V(x):
        x = np.asarray(x, dtype=float)
        return sol.sol(x)[0] if x.ndim else float(sol.sol(x)[0])

    return V


# -- serialization ------------------------------------------------------------


def save_value_grid(vg: ValueGrid, path: str | Path) -> Path:
    """Write the grid as CSV (canonical) or ``.npz``."""
    path = Path(path)
    X = vg.nodes()
    vals = vg.values.reshape(-1)
    pol = vg.policy.reshape(-1, vg.k)
    res = vg.residual.reshape(-1)
    s = vg.spec
    if path.suffix == ".npz":
        np.savez(path, nodes=X, values=vals, policy=pol, residual=res, k=vg.k, B=s.box_halfwidth,
                 M=s.points_per_axis, S=s.simplex_resolution, tol=s.tol_residual, iters=vg.iterations,
                 cost_hash=vg.cost_hash)
        return path
    with path.open("w", newline="") as fh:
        fh.write(f"# k={vg.k} B={s.box_halfwidth!r} M={s.points_per_axis} cost_hash={vg.cost_hash} "
                 f"S={s.simplex_resolution} tol={s.tol_residual!r} iters={vg.iterations}\n")
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(vg.k)] + ["value"] + [f"u{j + 1}" for j in range(vg.k)] + ["residual"])
        for xi, v, u, r in zip(X, vals, pol, res):
            w.writerow([repr(float(a)) for a in xi] + [repr(float(v))] + [repr(float(a)) for a in u] + [repr(float(r))])
    return path


def load_value_grid(path: str | Path) -> ValueGrid:
    path = Path(path)
    if path.suffix == ".npz":
        z = np.load(path)
        meta = {"k": int(z["k"]), "B": float(z["B"]), "M": int(z["M"]), "S": int(z["S"]),
                "tol": float(z["tol"]), "iters": int(z["iters"]), "cost_hash": str(z["cost_hash"])}
        vals, pol, res = z["values"], z["policy"], z["residual"]
    else:
        with path.open() as fh:
            header = fh.readline().lstrip("#").split()
            meta = dict(item.split("=", 1) for item in header)
            rows = list(csv.reader(fh))[1:]
        k = int(meta["k"])
        data = np.array(rows, dtype=float)
        vals, pol, res = data[:, k], data[:, k + 1:2 * k + 1], data[:, 2 * k + 1]
        meta = {"k": k, "B": float(meta["B"]), "M": int(meta["M"]), "S": int(meta["S"]),
                "tol": float(meta["tol"]), "iters": int(meta["iters"]), "cost_hash": meta["cost_hash"]}
    k, M = meta["k"], meta["M"]
    spec = GridSpec(box_halfwidth=meta["B"], points_per_axis=M, simplex_resolution=meta["S"],
                    tol_residual=meta["tol"])
    shape = (M,) * k
    return ValueGrid(spec=spec, k=k, values=vals.reshape(shape), policy=pol.reshape(shape + (k,)),
                     residual=res.reshape(shape), cost_hash=meta["cost_hash"], iterations=meta["iters"])
