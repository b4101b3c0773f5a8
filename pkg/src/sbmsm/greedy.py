"""Greedy partially adaptive policies.

The budget vector is fixed up front by allocating unit by unit to the round
whose next greedy step promises the largest (prefix-minimized) estimated gain.
Each round then runs the adaptive single-round greedy with its share.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import Instance, PartialState, TabularRound
from .oracles import OracleConfig, oracle1, oracle2_batch
from .streams import as_stream


def epsilon_to_params(epsilon: float, c: float, lam: float, capital_lambda: float, B: int) -> tuple[float, float]:
    """Oracle accuracy delta = xi = lam * c * eps / (B * (4 + 3 * Lambda))."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < c <= 1:
        raise ValueError("c must lie in (0, 1]")
    if not (lam > 0 and capital_lambda > 0 and B > 0):
        raise ValueError("lambda, capital_lambda and B must be positive")
    d = lam * c * epsilon / (B * (4.0 + 3.0 * capital_lambda))
    return d, d


def digest(knowledge) -> str:
    raw = knowledge.key()
    if isinstance(raw, str):
        raw = raw.encode()
    return hashlib.sha1(raw).hexdigest()[:12]


def choose_item(instance: Instance, t: int, knowledge, candidates, config: OracleConfig, stream, cache=None):
    """Greedy choice among ``candidates``: largest estimate, lowest id on ties."""
    if not candidates:
        return None, 0.0
    key = (t, knowledge.obs) if cache is not None and isinstance(knowledge, PartialState) else None
    if key is not None and key in cache:
        return cache[key]
    best_v, best = None, -math.inf
    q = None if config.exact else config.q1(instance.n, instance.capital_lambda)
    for v in candidates:
        est = oracle1(q, instance, t, knowledge, v, stream.spawn("item", v) if not config.exact else None,
                      workers=config.workers, exact=config.exact)
        if est > best:
            best_v, best = v, est
    if key is not None:
        cache[key] = (best_v, best)
    return best_v, best


def run_single_round(instance: Instance, t: int, b: int, config: OracleConfig, session, stream, cache=None) -> list[dict]:
    """Greedily select up to ``b`` items on a live session; one record per selection."""
    stream = as_stream(stream)
    steps = []
    for step in range(1, b + 1):
        v, est = choose_item(instance, t, session.knowledge, session.candidates(), config,
                             stream.spawn("step", step), cache)
        if v is None:
            break
        session.select(v)
        steps.append({"t": t, "step": step, "item": int(v), "estimate": float(est),
                      "observation": digest(session.knowledge), "value": float(session.value())})
    return steps


def single_gr(instance: Instance, t: int, b: int, config: OracleConfig, session=None, stream=0):
    """Select exactly ``b`` items of round ``t`` (fewer only if no candidate is left)."""
    if not 0 <= b <= instance.n:
        raise ValueError(f"budget {b} outside 0..{instance.n}")
    stream = as_stream(stream)
    if session is None:
        session = instance.round(t).session(stream.spawn("state", t).rng)
    steps = run_single_round(instance, t, b, config, session, stream.spawn("select", t))
    return [s["item"] for s in steps], steps


def allocate(bar: np.ndarray, B: int) -> np.ndarray:
    """Unit-by-unit allocation to the round with the largest next bound (lowest round on ties)."""
    T, n = bar.shape
    b = np.zeros(T, dtype=int)
    for _ in range(B):
        best_t, best = None, -math.inf
        for t in range(T):
            val = bar[t, b[t]] if b[t] < n else -math.inf
            if val > best:
                best_t, best = t, val
        if best_t is None:
            raise ValueError("budget exceeds total capacity n * T")
        b[best_t] += 1
    return b


def budget_gr(instance: Instance, config: OracleConfig, stream=0):
    """Non-adaptive budget vector from per-round greedy step estimates.

    Returns the vector and a dict with the raw estimates and their prefix minima.
    """
    config.check_instance(instance)
    stream = as_stream(stream)
    T, n = instance.T, instance.n
    if config.exact:
        est = np.array([greedy_increments(instance.rounds[t]) for t in range(T)])
        q2 = None
    else:
        q2 = config.q2_for(n, T, instance.capital_lambda)

        def one(t):
            return oracle2_batch(q2, instance, t, config, stream.spawn("budget", t))

        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                est = np.array(list(pool.map(one, range(T))))
        else:
            est = np.array([one(t) for t in range(T)])
    bar = np.minimum.accumulate(est, axis=1)
    return allocate(bar, instance.B), {"estimates": est, "bounds": bar, "q2": q2}


@dataclass
class GreedyTrace:
    budget: list
    selected: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        keys = ("t", "step", "item", "estimate", "observation")
        return "".join(json.dumps({k: r[k] for k in keys}, sort_keys=True) + "\n" for r in self.records)


def multi_gr(instance: Instance, config: OracleConfig, stream=0, budget=None):
    """Fix the budget vector (unless given), then run the round greedy in order; returns (trace, value)."""
    stream = as_stream(stream)
    if budget is None:
        budget, _ = budget_gr(instance, config, stream.spawn("budget"))
    trace = GreedyTrace([int(x) for x in budget])
    total = 0.0
    for t in range(instance.T):
        sess = instance.rounds[t].session(stream.spawn("state", t).rng)
        steps = run_single_round(instance, t, int(budget[t]), config, sess, stream.spawn("select", t))
        trace.records.extend(steps)
        trace.selected.append([s["item"] for s in steps])
        total += sess.value()
    return trace, total


# exact greedy quantities by trajectory enumeration

def _exact_choice(rnd, obs: PartialState, cache: dict):
    hit = cache.get(obs.obs)
    if hit is None:
        best_v, best = None, -math.inf
        for v in range(rnd.n):
            if v in obs:
                continue
            m = rnd.exact_marginal(obs, v)
            if m > best:
                best_v, best = v, m
        hit = cache[obs.obs] = (best_v, best)
    return hit


def greedy_increments(rnd, steps: int | None = None) -> np.ndarray:
    """Expected increment of the exact-oracle greedy at steps 1..steps (default n)."""
    steps = rnd.n if steps is None else steps
    out = np.zeros(steps)
    cache: dict = {}

    def walk(obs: PartialState, prob: float) -> None:
        i = len(obs)
        if i >= steps:
            return
        v, m = _exact_choice(rnd, obs, cache)
        if v is None:
            return
        out[i] += prob * m
        for s, p in rnd.outcomes(obs, v):
            walk(obs.extend(v, s), prob * p)

    walk(PartialState(), 1.0)
    return out


def greedy_round_value(rnd, b: int) -> float:
    """Expected objective of the exact-oracle greedy with budget ``b`` in one round."""
    cache: dict = {}
    terms = []

    def walk(obs: PartialState, prob: float) -> None:
        v = None
        if len(obs) < b:
            v, _ = _exact_choice(rnd, obs, cache)
        if v is None:
            terms.append(prob * rnd.expected_value(obs))
            return
        for s, p in rnd.outcomes(obs, v):
            walk(obs.extend(v, s), prob * p)

    walk(PartialState(), 1.0)
    return math.fsum(terms)


def greedy_expected_value(instance: Instance, budget) -> float:
    return math.fsum(greedy_round_value(instance.rounds[t], int(budget[t])) for t in range(instance.T))


def greedy_state_increments(rnd: TabularRound) -> np.ndarray:
    """Realized step increments of the exact-oracle greedy for every global state, shape (H, n)."""
    H, n = rnd.n_states, rnd.n
    Y = np.zeros((H, n))
    cache: dict = {}
    for h in range(H):
        if rnd.prob[h] <= 0:
            continue
        obs = PartialState()
        prev = 0.0
        for i in range(n):
            v, _ = _exact_choice(rnd, obs, cache)
            obs = obs.extend(v, int(rnd.local[h, v]))
            cur = float(rnd.table[obs.mask, h])
            Y[h, i] = cur - prev
            prev = cur
    return Y
