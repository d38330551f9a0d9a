import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qedsched.policyfn import CallablePolicy, ConstantPolicy, GridPolicy, MollifiedPolicy, project_simplex


def _vertex_grid(B=2.0, M=5):
    # e1 where the first coordinate is <= 0, e2 elsewhere
    ax = np.linspace(-B, B, M)
    X = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    table = np.where((X[:, 0] <= 0)[:, None], [1.0, 0.0], [0.0, 1.0])
    return GridPolicy(B, M, table), X, table


def _half_plane(x):
    x = np.atleast_2d(x)
    return np.where((x[:, 0] + 0.3 * x[:, 1] > 0)[:, None], [0.0, 1.0], [1.0, 0.0])


def test_project_simplex():
    np.testing.assert_allclose(project_simplex([-1.0, 3.0]), [0.0, 1.0])
    np.testing.assert_allclose(project_simplex([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(project_simplex([[1.0, 1.0], [2.0, 6.0]]), [[0.5, 0.5], [0.25, 0.75]])


def test_grid_nodes_reproduce_table():
    h, X, table = _vertex_grid()
    np.testing.assert_allclose(h(X), table, atol=1e-15)
    for x, u in zip(X, table):
        assert h.point(list(x)) == pytest.approx(tuple(u), abs=1e-15)


def test_grid_midpoint_between_vertices():
    h, _, _ = _vertex_grid()
    # nodes at x1 = 0 (e1) and x1 = 1 (e2)
    assert h.point([0.5, 0.0]) == pytest.approx((0.5, 0.5))
    np.testing.assert_allclose(h(np.array([[0.5, 1.0]])), [[0.5, 0.5]])


def test_grid_outside_uses_nearest_boundary_node():
    h, _, _ = _vertex_grid()
    assert h.point([-10.0, 0.3]) == pytest.approx((1.0, 0.0))
    assert h.point([10.0, -7.0]) == pytest.approx((0.0, 1.0))
    np.testing.assert_allclose(h(np.array([[10.0, 0.2], [-3.0, 9.0]])), [[0, 1], [1, 0]])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=2, max_size=2))
def test_grid_point_matches_vectorized(x):
    rng = np.random.default_rng(1)
    table = rng.dirichlet([1, 1], size=7 * 7)
    h = GridPolicy(2.5, 7, table)
    np.testing.assert_allclose(h.point(x), h(np.array([x]))[0], atol=1e-12)


def test_constant_mollifies_to_itself():
    u = (0.3, 0.7)
    m = MollifiedPolicy(ConstantPolicy(u), 0.2)
    for x in np.random.default_rng(0).normal(size=(20, 2)):
        assert m.point(list(x)) == pytest.approx(u, abs=1e-14)
    np.testing.assert_allclose(m(np.zeros((3, 2))), [u] * 3, atol=1e-14)


def test_mollifier_matches_brute_enumeration():
    eps = 0.25
    base = CallablePolicy(_half_plane, 2)
    m = MollifiedPolicy(base, eps)
    R = eps * math.sqrt(2)
    for x in [np.array([0.0, 0.0]), np.array([0.25, -0.5]), np.array([0.1, 0.03])]:
        num, den = np.zeros(2), 0.0
        for i, j in itertools.product(range(-6, 7), repeat=2):
            y = x.round(12) // eps * eps + np.array([i, j]) * eps
            d = R - np.linalg.norm(x - y)
            if d > 0:
                num += d * _half_plane(y)[0]
                den += d
        np.testing.assert_allclose(m.point(list(x)), num / den, atol=1e-12)
        np.testing.assert_allclose(m(x[None])[0], num / den, atol=1e-12)


def test_mollifier_lipschitz_sampled():
    eps = 0.1
    m = MollifiedPolicy(CallablePolicy(_half_plane, 2), eps)
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, size=(1000, 2))
    y = x + rng.normal(scale=1e-3, size=x.shape)
    ratio = np.linalg.norm(m(x) - m(y), axis=1) / np.linalg.norm(x - y, axis=1)
    # each weight d is 1-Lipschitz and the denominator is bounded below by a multiple of eps
    assert np.isfinite(ratio).all() and ratio.max() < 50 / eps


def test_mollifier_gap_shrinks_at_continuity_point():
    base = CallablePolicy(lambda x: np.column_stack([np.exp(-x[:, 0] ** 2), 1 + x[:, 1] ** 2]), 2)
    x = [0.37, -0.21]
    target = np.asarray(base.point(x))
    gaps = [np.linalg.norm(np.asarray(MollifiedPolicy(base, e).point(x)) - target) for e in (0.2, 0.1, 0.05)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_mollifier_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        MollifiedPolicy(ConstantPolicy((1.0, 0.0)), 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.sampled_from([0.05, 0.2, 0.7]))
def test_mollifier_outputs_on_simplex(x, eps):
    m = MollifiedPolicy(CallablePolicy(_half_plane, 2), eps)
    u = np.asarray(m.point(x))
    assert np.all(u >= 0) and abs(u.sum() - 1) < 1e-12
    np.testing.assert_allclose(u, m(np.array([x]))[0], atol=1e-12)
