import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbmsm.core import Instance, NotTabularError, PartialState, SizeGuardError, tabular_round
from sbmsm.exact import (
    STOP, ExactPolicy, PolicyMismatchError, execute_exact_policy, per_round_opt_table,
    solve_dp, solve_single_round, tree_stats,
)
from sbmsm.generators import random_tabular_instance
from sbmsm.influence import InfluenceGraph, influence_instance
from sbmsm.probing import Additive, ProbingRound, make_probing_instance, probing_to_tabular
from sbmsm.streams import Stream


def det_additive(w):
    n = len(w)
    return tabular_round([((0,) * n, 1.0)], lambda m, h: sum(w[v] for v in range(n) if m >> v & 1), n)


def concentrated_like(T):
    n = T
    zero = tabular_round([((0,) * n, 1.0)], lambda m, h: 0.0, n)
    count = tabular_round([((0,) * n, 1.0)], lambda m, h: float(bin(m).count("1")), n)
    rounds = [zero] * (T - 1) + [count]
    return Instance(T, T, tuple(rounds), lam=1.0, capital_lambda=1.0)


def test_zero_budget_always_stops():
    rnd = det_additive([3.0, 1.0])
    val, pol = solve_single_round(rnd, 0, [2.5])
    assert val == 2.5
    assert set(pol.values()) == {STOP}


@pytest.mark.parametrize("enumerate_only", [False, True])
def test_deterministic_prefix_tradeoff(enumerate_only):
    rnd = det_additive([3.0, 1.0, 2.0])
    cont = [0.0, 2.5, 4.0, 4.5]
    val, _ = solve_single_round(rnd, 3, cont, closed_form=not enumerate_only)
    # by hand: i=0 -> 4.5, i=1 -> 3+4, i=2 -> 5+2.5, i=3 -> 6
    assert val == pytest.approx(7.5)


def test_single_round_count_objective():
    rnd = concentrated_like(4).rounds[-1]
    val, pol = solve_single_round(rnd, 4, [0.0] * 5, closed_form=False)
    assert val == 4.0
    assert pol[PartialState()] != STOP


def test_t1_matches_single_round():
    inst = random_tabular_instance(np.random.default_rng(1), T=1, n=3, H=3, B=2)
    pol = solve_dp(inst)
    val, _ = solve_single_round(inst.rounds[0], 2, [0.0, 0.0, 0.0])
    assert pol.value == pytest.approx(val, abs=1e-12)


@pytest.mark.parametrize("T", [2, 5])
def test_count_instance_optimum(T):
    assert solve_dp(concentrated_like(T)).value == T


def test_lookahead_style_closed_form():
    n = 10
    r1 = ProbingRound(np.ones(n), Additive([1.0] + [0.5] * (n - 1)))
    r2 = ProbingRound(np.ones(n), Additive([1.0] + [0.0] * (n - 1)))
    inst = Instance(2, n + 1, (r1, r2), lam=1.0, capital_lambda=1.0, kind="probing")
    assert solve_dp(inst).value == pytest.approx(n / 2 + 1.5)


def test_value_table_invariants():
    for seed in range(20):
        inst = random_tabular_instance(np.random.default_rng(seed), T=3, n=3, H=4, B=3)
        R = solve_dp(inst).R
        assert np.all(R[-1] == 0)
        assert np.all(np.diff(R, axis=1) >= -1e-12)
        assert np.all(R[:-1] >= R[1:] - 1e-12)


def test_memoization_does_not_change_value():
    for seed in range(10):
        inst = random_tabular_instance(np.random.default_rng(100 + seed), T=1, n=3, H=4, B=2)
        rnd = inst.rounds[0]
        a, _ = solve_single_round(rnd, 2, [0.0, 0.3, 0.5], memoize=True)
        b, _ = solve_single_round(rnd, 2, [0.0, 0.3, 0.5], memoize=False)
        assert a == pytest.approx(b, abs=1e-12)


def test_policy_never_selects_observed_or_without_budget():
    inst = random_tabular_instance(np.random.default_rng(5), T=2, n=3, H=4, B=3)
    pol = solve_dp(inst)
    for (t, b, obs), a in pol.actions.items():
        if a == STOP:
            continue
        state = PartialState(obs)
        assert a not in state
        assert b - len(state) > 0


def test_size_guard():
    inst = random_tabular_instance(np.random.default_rng(0), T=1, n=3, H=4, B=2)
    with pytest.raises(SizeGuardError):
        solve_dp(inst, max_n=2)


def test_rejects_influence():
    g = InfluenceGraph(2, [(0, 1)], [[0.5]], [[1, 1]])
    with pytest.raises(NotTabularError):
        solve_dp(influence_instance(g, 1, 1.0))


def test_execute_deterministic_is_exact():
    inst = concentrated_like(5)
    pol = solve_dp(inst)
    rng = np.random.default_rng(0)
    for _ in range(20):
        _, value = execute_exact_policy(pol, inst, rng)
        assert value == 5.0


def test_execute_mean_converges():
    inst = random_tabular_instance(np.random.default_rng(3), T=2, n=3, H=3, B=2)
    pol = solve_dp(inst)
    root = Stream(17)
    vals = np.array([execute_exact_policy(pol, inst, root.spawn("rollout", k).rng)[1] for k in range(20_000)])
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - pol.value) <= 3 * se + 1e-12


def test_execute_mismatch():
    inst = concentrated_like(3)
    pol = solve_dp(inst)
    empty = ExactPolicy(pol.T, pol.B, pol.R, {})
    with pytest.raises(PolicyMismatchError):
        execute_exact_policy(empty, inst, np.random.default_rng(0))


def test_policy_json_round_trip():
    inst = random_tabular_instance(np.random.default_rng(8), T=2, n=2, H=2, B=2)
    pol = solve_dp(inst)
    back = ExactPolicy.from_json(pol.to_json())
    assert back.actions == pol.actions
    assert np.array_equal(back.R, pol.R)


def test_tree_stats_one_item():
    rnd = det_additive([1.0])
    s = tree_stats(rnd, 1)
    assert s["leaves"] == 2
    assert s["policy_nodes"] == 2


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(0, 4))
def test_tree_stats_bounds(seed, n, b):
    inst = random_tabular_instance(np.random.default_rng(seed), T=1, n=n, H=4, B=0)
    rnd = inst.rounds[0]
    H = int(np.count_nonzero(rnd.prob > 0))
    s = tree_stats(rnd, min(b, n))
    bound = sum(math.factorial(n) // math.factorial(n - k) for k in range(n + 1)) * H
    assert s["leaves"] <= bound
    assert s["policy_nodes"] + s["leaves"] <= 2 * s["leaves"]


def test_per_round_opt_table():
    rnd = det_additive([3.0, 1.0, 2.0])
    assert per_round_opt_table(rnd, 4).tolist() == [0.0, 3.0, 5.0, 6.0, 6.0]


def test_per_round_opt_table_forces_selection():
    # the only item with value is worthless to stop early for; forced mode still counts exactly b picks
    inst = random_tabular_instance(np.random.default_rng(2), T=1, n=3, H=4, B=0)
    opt = per_round_opt_table(inst.rounds[0], 3)
    assert opt[0] == 0.0
    assert np.all(np.diff(opt) >= -1e-12)


def test_probing_exact_matches_tabularized():
    inst = make_probing_instance(2, 2, [0.5, 0.3, 0.9], Additive([1.0, 2.0, 0.5]), 0.45, 2.0)
    a = solve_dp(inst).value
    b = solve_dp(probing_to_tabular(inst)).value
    assert a == pytest.approx(b, abs=1e-12)
