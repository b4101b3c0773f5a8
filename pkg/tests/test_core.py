import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbmsm.core import (
    Instance, InstanceError, NotTabularError, PartialState, TabularRound,
    ZeroProbabilityError, tabular_round,
)
from sbmsm.streams import Stream


def two_state_round():
    # item 0 observes the state, item 1 is worth 2 only in state 1
    states = [((0, 0), 0.25), ((1, 1), 0.75)]

    def f(mask, h):
        return (1.0 if mask & 1 else 0.0) + (2.0 * h if mask & 2 else 0.0)

    return tabular_round(states, f, 2)


def test_partial_state_is_order_independent():
    a = PartialState(((2, 1), (0, 0)))
    b = PartialState(((0, 0), (2, 1)))
    assert a == b and hash(a) == hash(b)
    assert a.items == (0, 2)
    assert a.key() == "0:0,2:1"
    assert PartialState.from_key(a.key()) == a


def test_partial_state_rejects_repeats():
    with pytest.raises(ValueError):
        PartialState(((1, 0), (1, 1)))
    with pytest.raises(ValueError):
        PartialState(((1, 0),)).extend(1, 0)


def test_precedes():
    s = PartialState(((0, 1),))
    assert s.precedes(s)
    assert s.precedes(s.extend(2, 0))
    assert not s.extend(2, 0).precedes(s)
    assert not PartialState(((0, 0),)).precedes(s.extend(2, 0))


def test_eval_objective_normalized_and_lookup():
    rnd = two_state_round()
    inst = Instance(1, 1, (rnd,), lam=0.5, capital_lambda=2.0)
    inst.validate()
    assert inst.eval_objective(0, [], 0) == 0.0
    assert inst.eval_objective(0, [1], 1) == 2.0
    with pytest.raises(InstanceError):
        inst.eval_objective(0, [0], 5)
    with pytest.raises(InstanceError):
        inst.eval_objective(0, [7], 0)


def test_sample_state_single_state():
    rnd = tabular_round([((0,), 1.0)], lambda m, h: float(m), 1)
    rng = np.random.default_rng(0)
    assert {rnd.sample_state(rng) for _ in range(50)} == {0}


def test_sample_state_frequencies():
    rnd = two_state_round()
    draws = rnd.sample_states(100_000, Stream(1).rng)
    assert abs(np.mean(draws == 0) - 0.25) < 0.01


def test_sample_extension_reflexive_and_unique():
    rnd = two_state_round()
    rng = np.random.default_rng(3)
    obs = PartialState(((0, 1),))
    assert rnd.sample_extension(obs, [0], rng) == obs
    # observing item 0 pins the state, so the extension is forced
    assert rnd.sample_extension(obs, [0, 1], rng) == PartialState(((0, 1), (1, 1)))


def test_sample_extension_conditional_frequencies():
    # three states; observing item 0 = 0 leaves states 0 and 1 with odds 1:3
    local = [[0, 0], [0, 1], [1, 1]]
    prob = [0.1, 0.3, 0.6]
    table = np.zeros((4, 3))
    table[1:, :] = 1.0
    rnd = TabularRound(local, prob, table)
    rng = Stream(7).rng
    obs = PartialState(((0, 0),))
    hits = sum(rnd.sample_extension(obs, [1], rng).get(1) == 1 for _ in range(100_000))
    assert abs(hits / 100_000 - 0.75) < 0.01


def test_sample_extension_chain_consistency():
    local = [[0, 0, 0], [0, 1, 1], [1, 0, 1], [1, 1, 0]]
    prob = [0.1, 0.2, 0.3, 0.4]
    table = np.zeros((8, 4))
    table[1:] = 1.0
    rnd = TabularRound(local, prob, table)
    rng = Stream(11).rng
    start = PartialState(((0, 0),))
    m = 40_000
    direct = [rnd.sample_extension(start, [0, 1, 2], rng).get(2) for _ in range(m)]
    two = [rnd.sample_extension(rnd.sample_extension(start, [0, 1], rng), [0, 1, 2], rng).get(2) for _ in range(m)]
    # exact P(item2 = 1 | item0 = 0) = 0.2 / 0.3
    assert abs(np.mean(direct) - 2 / 3) < 0.015
    assert abs(np.mean(two) - 2 / 3) < 0.015


def test_sample_extension_zero_probability():
    rnd = two_state_round()
    with pytest.raises(ZeroProbabilityError):
        rnd.sample_extension(PartialState(((0, 0), (1, 1))), [0, 1], np.random.default_rng(0))


def test_exact_marginal_examples():
    rnd = two_state_round()
    inst = Instance(1, 1, (rnd,), lam=0.5, capital_lambda=2.0)
    empty = PartialState()
    assert inst.exact_marginal(0, 1, empty) == pytest.approx(1.5)
    assert inst.exact_marginal(0, 1, PartialState(((0, 0),))) == 0.0
    assert inst.exact_marginal(0, 0, PartialState(((0, 1),))) == 0.0
    with pytest.raises(ZeroProbabilityError):
        inst.exact_marginal(0, 1, PartialState(((0, 0), (1, 1))))


def test_exact_marginal_single_state():
    w = [3.0, 1.0, 2.0]
    rnd = tabular_round([((0, 0, 0), 1.0)], lambda m, h: sum(w[v] for v in range(3) if m >> v & 1), 3)
    obs = PartialState(((2, 0),))
    assert rnd.exact_marginal(obs, 0) == 3.0


def test_exact_marginal_rejects_sampling_only_rounds():
    class Opaque:
        kind = "opaque"
        n = 1

    inst = Instance(1, 0, (Opaque(),), lam=1, capital_lambda=1, kind="opaque")
    with pytest.raises(NotTabularError):
        inst.exact_marginal(0, 0, PartialState())


def test_validation_errors():
    with pytest.raises(InstanceError, match="sum"):
        TabularRound([[0], [1]], [0.5, 0.4], np.zeros((2, 2)))
    table = np.array([[0.0], [1.0]])
    with pytest.raises(InstanceError, match="f\\(empty"):
        TabularRound([[0]], [1.0], np.array([[0.5], [1.0]]))
    TabularRound([[0]], [1.0], table)
    bad = np.zeros((4, 1))
    bad[1] = 2.0
    bad[3] = 1.0
    with pytest.raises(InstanceError, match=r"S=\[0\].*S'=\[0, 1\].*state 0"):
        TabularRound([[0, 0]], [1.0], bad)


def test_header_validation():
    rnd = two_state_round()
    with pytest.raises(InstanceError, match="budget"):
        Instance(1, 2, (rnd,), lam=0.5, capital_lambda=2).validate()
    with pytest.raises(InstanceError, match="exceeds"):
        Instance(1, 1, (rnd,), lam=3, capital_lambda=2).validate()
    with pytest.raises(InstanceError, match="capital_lambda"):
        Instance(1, 1, (rnd,), lam=0.5, capital_lambda=1).validate()
    with pytest.raises(InstanceError, match="rounds"):
        Instance(2, 1, (rnd,), lam=0.5, capital_lambda=2).validate()


def test_session_matches_table():
    rnd = two_state_round()
    s = rnd.session(np.random.default_rng(0), state=1)
    assert s.candidates() == [0, 1]
    assert s.select(1) == 1
    assert s.candidates() == [0]
    assert s.value() == 2.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=4), st.integers(0, 2**31 - 1))
def test_exact_marginal_matches_bayes(weights, seed):
    # random table over two items and H states; compare to a direct Bayes sum
    rng = np.random.default_rng(seed)
    H = len(weights)
    prob = np.array(weights) / sum(weights)
    local = rng.integers(0, 2, size=(H, 2))
    base = rng.random((H, 2))
    table = np.zeros((4, H))
    for m in range(4):
        for h in range(H):
            vals = [base[h, v] for v in range(2) if m >> v & 1]
            table[m, h] = max(vals, default=0.0)
    rnd = TabularRound(local, prob, table)
    for s in (0, 1):
        consistent = [h for h in range(H) if local[h, 0] == s]
        if not consistent:
            continue
        z = sum(prob[h] for h in consistent)
        want = sum(prob[h] * (table[3, h] - table[1, h]) for h in consistent) / z
        got = rnd.exact_marginal(PartialState(((0, s),)), 1)
        assert got == pytest.approx(want, abs=1e-12)
