import math

import numpy as np
import pytest

from qedsched.costs import linear_queue, zero_cost
from qedsched.diffusion import SdeRunConfig, compare_policies, simulate_cost, verification_drift
from qedsched.hjb import extract_policy_fn, solve_k1_reference, value_fn
from qedsched.params import diffusion_coeffs
from qedsched.policyfn import ConstantPolicy

from conftest import one_class_limits

ONE = ConstantPolicy((1.0,))


@pytest.fixture(scope="module")
def ou():
    limits = one_class_limits(theta=[1.0])
    return limits, diffusion_coeffs(limits), linear_queue([1.0])


def test_config_validation():
    with pytest.raises(ValueError):
        SdeRunConfig((0.0,), dt=0.0)
    with pytest.raises(ValueError):
        SdeRunConfig((0.0,), dt=0.1, horizon=0.05)
    with pytest.raises(ValueError):
        SdeRunConfig((0.0,), reps=0)
    with pytest.raises(ValueError):
        SdeRunConfig((0.0,), dt=1e-3, noise_dt=3e-4)


def test_zero_cost(limits2, coeffs2):
    mean, se = simulate_cost(SdeRunConfig((1.0, 1.0), reps=10), ConstantPolicy((0.5, 0.5)), zero_cost(2),
                             coeffs2, limits2)
    assert mean == 0.0 and se == 0.0


def test_ou_matches_ode_reference(ou):
    limits, coeffs, cost = ou
    ref = solve_k1_reference(cost, coeffs, limits)
    for x in (-1.0, 1.0):
        res = simulate_cost(SdeRunConfig((x,), dt=1e-3, horizon=12, reps=10_000, seed=4), ONE, cost, coeffs, limits)
        assert abs(res.mean - ref(x)) <= max(3 * res.se, 2e-2)
        assert res.tail_bound < 1e-3


def test_weak_order_one_self_convergence(ou):
    limits, coeffs, cost = ou
    means = {}
    for dt in (4e-3, 2e-3, 1e-3):
        cfg = SdeRunConfig((0.5,), dt=dt, horizon=6, reps=4000, seed=11, noise_dt=1e-3)
        means[dt] = simulate_cost(cfg, ONE, cost, coeffs, limits).mean
    d1 = abs(means[4e-3] - means[2e-3])
    d2 = abs(means[2e-3] - means[1e-3])
    assert d2 < d1
    assert d1 <= 2.0 * 4e-3


def test_crn_identical_policies_have_zero_difference(limits2, coeffs2, quad_cost, solved2):
    h = extract_policy_fn(solved2)
    cmp = compare_policies((0.5, 0.5), {"a": h, "b": h}, quad_cost, coeffs2, limits2, horizon=2, reps=200)
    assert cmp.diff[("a", "b")] == (0.0, 0.0)
    single = compare_policies((0.5, 0.5), {"a": h}, quad_cost, coeffs2, limits2, horizon=1, reps=50)
    assert single.is_best("a")


def test_hjb_policy_beats_vertex_policy(limits2, coeffs2, quad_cost, solved2):
    h = extract_policy_fn(solved2)
    pols = {"hjb": h, "e1": ConstantPolicy((1.0, 0.0)), "e2": ConstantPolicy((0.0, 1.0))}
    cmp = compare_policies((1.0, 1.0), pols, quad_cost, coeffs2, limits2, horizon=10, reps=2000, seed=3)
    assert cmp.is_best("hjb")
    for other in ("e1", "e2"):
        d, se = cmp.diff[("hjb", other)]
        assert d <= 3 * se


def test_value_consistency_at_probes(limits2, coeffs2, quad_cost, solved2):
    h = extract_policy_fn(solved2)
    V = value_fn(solved2)
    tol = 5 * solved2.spec.tol_residual / limits2.gamma
    for j, x in enumerate([(0.5, 0.5), (0.0, 0.0), (-1.0, 0.5), (1.0, 1.0), (1.5, -0.5)]):
        res = simulate_cost(SdeRunConfig(x, dt=2e-3, horizon=10, reps=2000, seed=100 + j), h, quad_cost, coeffs2,
                            limits2)
        assert abs(res.mean - V(np.array(x))) <= max(3 * res.se, tol, 3e-2), x


def test_hjb_statistic_has_nonnegative_drift(limits2, coeffs2, quad_cost, solved2):
    V = value_fn(solved2)
    for pol in (extract_policy_fn(solved2), ConstantPolicy((1.0, 0.0))):
        out = verification_drift((1.0, 0.5), V, pol, quad_cost, coeffs2, limits2, reps=3000, seed=5)
        assert set(out) == {0.5, 1.0, 2.0}
        for mean, se in out.values():
            assert mean >= -3 * se


def test_horizon_doubling_within_tail_bound(limits2, coeffs2, quad_cost, solved2):
    h = extract_policy_fn(solved2)
    short = simulate_cost(SdeRunConfig((0.5, 0.5), dt=2e-3, horizon=6, reps=1000, seed=8), h, quad_cost, coeffs2,
                          limits2)
    long = simulate_cost(SdeRunConfig((0.5, 0.5), dt=2e-3, horizon=12, reps=1000, seed=8), h, quad_cost, coeffs2,
                         limits2)
    # same noise on [0, 6], so the difference is exactly the discounted cost on [6, 12]
    assert 0 <= long.mean - short.mean <= short.tail_bound
