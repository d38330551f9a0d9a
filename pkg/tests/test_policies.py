import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qedsched.costs import linear_queue
from qedsched.errors import EmptyK0, NonConvexCost, NonIntegerTotal, ZeroTheta
from qedsched.params import LimitParams, build_system
from qedsched.policies import (CMU, CMU_THETA, STATIC_PRIORITY, _nscp_pick, _pscp_target, baseline_assign,
                               cmu_policy, cmu_theta_policy, diagnostic_u, make_policy, n_scp1_policy,
                               n_scp2_policy, n_scp_pick_class, p_scp_assign, p_scp_policy, priority_split,
                               static_priority, theta_round)
from qedsched.policyfn import CallablePolicy, ConstantPolicy, MollifiedPolicy
from qedsched.state import QueueState

from conftest import two_class_limits


def _sys(n, **kw):
    return build_system(two_class_limits(**kw), n)


def _state(phi, psi):
    return QueueState(phi=phi, psi=psi)


def test_theta_round_examples():
    assert theta_round([1.0, 1.0]).tolist() == [1, 1]
    assert theta_round([0.4, 1.6]).tolist() == [0, 2]
    assert theta_round([2.5, 0.2, 0.3]).tolist() == [2, 0, 1]
    with pytest.raises(NonIntegerTotal):
        theta_round([0.5, 0.2])
    with pytest.raises(ValueError):
        theta_round([-1.0, 2.0])


def test_theta_round_fuzz():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        k = int(rng.integers(1, 6))
        total = int(rng.integers(0, 500))
        y = total * rng.dirichlet(np.ones(k))
        z = theta_round(y)
        assert z.sum() == total
        assert np.all(z >= 0)
        assert np.linalg.norm(z - y) <= 2 * k


def test_priority_split():
    assert priority_split([3, 5], 4, [1, 0]).tolist() == [0, 4]
    assert priority_split([3, 1], 10, [0, 1]).tolist() == [3, 1]


def test_pscp_no_queue():
    sys = _sys(10)
    psi = p_scp_assign(_state((0, 0), (3, 4)), sys, ConstantPolicy((0.5, 0.5)))
    assert psi.tolist() == [3, 4]


def test_pscp_splits_excess():
    sys = _sys(4)
    psi = p_scp_assign(_state((1, 1), (2, 2)), sys, ConstantPolicy((0.5, 0.5)))
    assert psi.tolist() == [2, 2]


def test_pscp_fallback_serves_highest_class_first():
    sys = _sys(2)
    psi = p_scp_assign(_state((2, 0), (1, 1)), sys, ConstantPolicy((0.0, 1.0)))
    assert psi.tolist() == [1, 1]


@settings(max_examples=300, deadline=None)
@given(X=st.lists(st.integers(0, 60), min_size=2, max_size=4), n=st.integers(1, 80),
       w=st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_pscp_output_is_admissible(X, n, w):
    k = len(X)
    u = np.asarray(w[:k]) + 1e-9
    u = tuple(u / u.sum())
    psi = _pscp_target(list(X), n, u)
    assert all(0 <= p <= x for p, x in zip(psi, X))
    assert sum(psi) == min(sum(X), n)  # work conserving


def test_nscp_examples():
    assert _nscp_pick([0, 0], [3, 2], 5, (0.5, 0.5)) is None
    # M = (0.5, 1.5)
    assert _nscp_pick([2, 0], [4, 2], 4, (0.25, 0.75)) == 0
    # M = (0.2, 0.2): both qualify, largest index wins
    assert _nscp_pick([1, 1], [3, 3], 4, (0.1, 0.1)) == 1


def test_nscp_empty_k0_is_reported():
    with pytest.raises(EmptyK0):
        _nscp_pick([1, 1], [5, 5], 8, (5.0, 5.0))


def test_nscp_state_level():
    sys = _sys(10)
    assert n_scp_pick_class(_state((0, 0), (5, 5)), sys, ConstantPolicy((0.5, 0.5))) is None
    assert n_scp_pick_class(_state((3, 1), (5, 5)), sys, ConstantPolicy((0.5, 0.5))) == 0


def test_diagnostic_u():
    assert diagnostic_u((1, 3), 10) == (0.25, 0.75)
    assert diagnostic_u((0, 0), 10, (2, 3)) == (0.5, 0.5)


def test_baselines_single_queue():
    sys = _sys(10)
    s = _state((0, 2), (5, 5))
    for kind in (STATIC_PRIORITY, CMU, CMU_THETA):
        assert baseline_assign(s, sys, kind) == 1


def test_cmu_tie_goes_to_larger_index():
    lim = LimitParams(lam=[1.0, 0.5], mu=[2.0, 1.0], theta=[1.0, 1.0], lam_hat=[0, 0], mu_hat=[0, 0],
                      c2u=[1, 1], gamma=1.0)
    sys = build_system(lim, 10)
    assert cmu_policy((1.0, 2.0)).pick(_state((1, 1), (5, 5)), sys) == 1


def test_static_priority_order():
    sys = _sys(10)
    pol = make_policy("prio(2,1)")
    assert pol.priority_order == (1, 0) and pol.policy_id == "prio(2,1)"
    assert pol.pick(_state((1, 1), (5, 5)), sys) == 1
    assert static_priority([0, 1]).pick(_state((1, 1), (5, 5)), sys) == 0


def test_cmu_theta_needs_positive_theta():
    with pytest.raises(ZeroTheta):
        cmu_theta_policy((1.0, 1.0), (0.0, 1.0))
    sys = _sys(10, theta=[0.0, 1.0])
    with pytest.raises(ZeroTheta):
        baseline_assign(_state((1, 1), (5, 5)), sys, CMU_THETA)


def test_cmu_theta_ranks_by_ratio():
    sys = _sys(10)  # theta = (0.5, 2)
    assert cmu_theta_policy((1.0, 1.0)).pick(_state((1, 1), (5, 5)), sys) == 0


class _NotConvex:
    convex_in_u = False
    cost_id = "fake"


def test_nscp2_refuses_nonconvex_cost():
    with pytest.raises(NonConvexCost):
        n_scp2_policy(ConstantPolicy((0.5, 0.5)), 100, cost=_NotConvex())
    n_scp2_policy(ConstantPolicy((0.5, 0.5)), 100, cost=linear_queue([1, 1]))


def test_nscp2_default_eps_and_constant_passthrough():
    h = CallablePolicy(lambda x: np.ones_like(x), 2)
    pol = n_scp2_policy(h, 16)
    assert pol.eps == pytest.approx(0.5) and isinstance(pol.policy_fn, MollifiedPolicy)
    const = ConstantPolicy((0.3, 0.7))
    a, b = n_scp2_policy(const, 16), n_scp1_policy(const)
    sys = _sys(16)
    rng = np.random.default_rng(0)
    for _ in range(200):
        phi = tuple(int(v) for v in rng.integers(0, 6, 2))
        s = _state(phi, (8, 8))
        assert a.pick(s, sys) == b.pick(s, sys)


def test_policy_ids_and_flags():
    h = ConstantPolicy((0.5, 0.5))
    assert p_scp_policy(h).policy_id == "pscp" and p_scp_policy(h).preemptive
    assert not n_scp1_policy(h).preemptive
    assert make_policy("nscp2(eps=0.2)", h=h).policy_id == "nscp2(eps=0.2)"
    assert make_policy("nscp2", h=h, n=10000).eps == pytest.approx(0.1)
    assert make_policy("cmutheta", limits=two_class_limits()).policy_id == "cmutheta"
    with pytest.raises(ValueError):
        make_policy("pscp")
    with pytest.raises(ValueError):
        make_policy("fifo")
    with pytest.raises(TypeError):
        p_scp_policy(h).pick(_state((0, 0), (1, 1)), _sys(4))
