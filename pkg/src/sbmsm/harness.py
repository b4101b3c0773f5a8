"""Verification oracles and constructive instances.

Independent brute-force optimum, rollout-based value estimation, rounding of
fractional budget vectors, adaptive submodularity checks, the budget
adaptivity gap family and the small counterexample instances for uniform
allocation and for cross-round greedy.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Iterator

import numpy as np

from .core import (
    Instance, NotTabularError, PartialState, SizeGuardError, TabularRound, has_exact_conditioning, mask_items,
)
from .exact import STOP, ExactPolicy, per_round_opt_table
from .probing import Additive, BudgetAdditive, ProbingRound
from .streams import Stream, as_stream

LIMIT_RATIO = math.e / (math.e - 1)
BRUTE_GUARD = {"n": 3, "T": 3, "H": 4, "B": 3}
ENUMERATION_LIMIT = 20_000
TOL = 1e-9


# brute-force optimum over explicit multi-round decision trees

class _Joint:
    """All combinations of per-round global states with their probabilities."""

    def __init__(self, instance: Instance):
        self.inst = instance
        self.rounds = instance.rounds
        per_round = [np.nonzero(r.prob > 0)[0].tolist() for r in self.rounds]
        self.states = list(itertools.product(*per_round))
        self.prob = [math.prod(float(self.rounds[t].prob[h]) for t, h in enumerate(js)) for js in self.states]

    def split(self, J, t, v):
        groups: dict[int, list[int]] = {}
        for j in J:
            s = int(self.rounds[t].local[self.states[j][t], v])
            groups.setdefault(s, []).append(j)
        return sorted(groups.items())

    def actions(self, t, b, mask):
        acts = [STOP]
        if bin(mask).count("1") < b:
            acts += [v for v in range(self.inst.n) if not mask >> v & 1]
        return acts


def _count_policies(jt: _Joint, t, b, mask, J, cap) -> int:
    if t == jt.inst.T:
        return 1
    total = 0
    for a in jt.actions(t, b, mask):
        if a == STOP:
            c = _count_policies(jt, t + 1, b - bin(mask).count("1"), 0, J, cap)
        else:
            c = 1
            for _, Jg in jt.split(J, t, a):
                c *= _count_policies(jt, t, b, mask | 1 << a, Jg, cap)
                if c > cap:
                    return cap + 1
        total += c
        if total > cap:
            return cap + 1
    return total


def _policies(jt: _Joint, hist, t, b, mask, J) -> list[dict]:
    if t == jt.inst.T:
        return [{}]
    out = []
    for a in jt.actions(t, b, mask):
        if a == STOP:
            subs = _policies(jt, hist + (("end", t),), t + 1, b - bin(mask).count("1"), 0, J)
        else:
            kids = [_policies(jt, hist + (("sel", t, a, s),), t, b, mask | 1 << a, Jg) for s, Jg in jt.split(J, t, a)]
            subs = []
            for combo in itertools.product(*kids):
                merged = {}
                for part in combo:
                    merged.update(part)
                subs.append(merged)
        for sub in subs:
            pol = dict(sub)
            pol[hist] = a
            out.append(pol)
    return out


def _evaluate_policy(jt: _Joint, pol: dict) -> float:
    total = []
    for j, js in enumerate(jt.states):
        hist, t, mask, value = (), 0, 0, 0.0
        while t < jt.inst.T:
            a = pol[hist]
            h = js[t]
            if a == STOP:
                value += float(jt.rounds[t].table[mask, h])
                hist += (("end", t),)
                t, mask = t + 1, 0
            else:
                s = int(jt.rounds[t].local[h, a])
                hist += (("sel", t, a, s),)
                mask |= 1 << a
        total.append(jt.prob[j] * value)
    return math.fsum(total)


def _expectimax(jt: _Joint, t, b, mask, J) -> float:
    if t == jt.inst.T:
        return 0.0
    rnd = jt.rounds[t]
    here = math.fsum(jt.prob[j] * float(rnd.table[mask, jt.states[j][t]]) for j in J)
    best = here + _expectimax(jt, t + 1, b - bin(mask).count("1"), 0, J)
    for a in jt.actions(t, b, mask)[1:]:
        val = math.fsum(_expectimax(jt, t, b, mask | 1 << a, Jg) for _, Jg in jt.split(J, t, a))
        best = max(best, val)
    return best


def brute_force_opt(instance: Instance, method: str = "auto", limit: int = ENUMERATION_LIMIT) -> float:
    """Best expected value over all deterministic adaptive policies, with no shared code with the solver.

    Policies are decision trees over full multi-round histories, scored by
    summing over every combination of per-round states.  ``enumerate`` lists
    every policy explicitly; ``expectimax`` takes the maximum over subtrees
    instead, which is equivalent and used when the policy count exceeds ``limit``.
    """
    if not all(isinstance(r, TabularRound) for r in instance.rounds):
        raise NotTabularError("brute force needs tabular rounds")
    H = max(int(np.count_nonzero(r.prob > 0)) for r in instance.rounds)
    g = BRUTE_GUARD
    if instance.n > g["n"] or instance.T > g["T"] or H > g["H"] or instance.B > g["B"]:
        raise SizeGuardError(f"brute force limited to n <= {g['n']}, T <= {g['T']}, |H| <= {g['H']}, B <= {g['B']}")
    jt = _Joint(instance)
    J = list(range(len(jt.states)))
    if method == "auto":
        method = "enumerate" if _count_policies(jt, 0, instance.B, 0, J, limit) <= limit else "expectimax"
    if method == "enumerate":
        return max(_evaluate_policy(jt, pol) for pol in _policies(jt, (), 0, instance.B, 0, J))
    if method == "expectimax":
        return _expectimax(jt, 0, instance.B, 0, J)
    raise ValueError(f"unknown method {method!r}")


# rollout estimation

@dataclass
class ValueEstimate:
    mean: float
    half_width: float
    rollouts: int
    seed: int
    method: str
    std_error: float

    def to_json(self) -> dict:
        return asdict(self)


def summarize(values: np.ndarray, value_range: float, seed: int, method: str = "hoeffding",
              alpha: float = 0.05) -> ValueEstimate:
    R = len(values)
    mean = math.fsum(values) / R
    sd = float(np.std(values, ddof=1)) if R > 1 else 0.0
    se = sd / math.sqrt(R)
    if method == "hoeffding":
        hw = math.sqrt(value_range**2 * math.log(2 / alpha) / (2 * R))
    elif method == "normal":
        hw = 1.96 * se
    else:
        raise ValueError(f"unknown confidence method {method!r}")
    return ValueEstimate(mean, hw, R, seed, method, se)


def estimate_policy_value(runner: Callable[[Instance, Stream], float], instance: Instance, rollouts: int,
                          seed: int = 42, method: str = "hoeffding", workers: int = 1) -> ValueEstimate:
    """Mean of independent rollouts; rollout k always uses the stream ("rollout", k) of ``seed``."""
    if rollouts < 1:
        raise ValueError("need at least one rollout")
    root = Stream(seed)

    def one(k: int) -> float:
        return float(runner(instance, root.spawn("rollout", k)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = np.array(list(pool.map(one, range(rollouts))))
    else:
        values = np.array([one(k) for k in range(rollouts)])
    return summarize(values, instance.value_range(), seed, method)


# rounding a fractional budget vector

def interpolated_objective(d, opt_tables) -> float:
    """Sum over rounds of the linear interpolation of OPT_t at d_t."""
    total = []
    for x, opt in zip(d, opt_tables):
        lo = math.floor(x + TOL)
        frac = x - lo
        if frac <= TOL:
            total.append(float(opt[lo]))
        else:
            total.append((1 - frac) * float(opt[lo]) + frac * float(opt[lo + 1]))
    return math.fsum(total)


def round_fractional_budget(d, opt_tables, tol: float = TOL) -> tuple[np.ndarray, int]:
    """Pairwise shift mass between fractional entries until all are integral.

    Each step moves the pair to the nearer pair of cell boundaries in the
    direction that does not lower the interpolated objective, which makes at
    least one entry integral.  Returns the integer vector and the step count.
    """
    d = np.asarray(d, dtype=float).copy()
    if abs(d.sum() - round(d.sum())) > 1e-9:
        raise ValueError("entries must sum to an integer budget")
    for t, opt in enumerate(opt_tables):
        if math.ceil(d[t] - tol) >= len(opt):
            raise ValueError(f"OPT table of round {t} does not cover {d[t]}")

    def snap():
        near = np.round(d)
        close = np.abs(d - near) <= tol
        d[close] = near[close]

    def slope(t):
        lo = math.floor(d[t])
        return float(opt_tables[t][lo + 1] - opt_tables[t][lo])

    snap()
    iterations = 0
    while True:
        frac = [t for t in range(len(d)) if d[t] != math.floor(d[t])]
        if len(frac) < 2:
            break
        t1, t2 = frac[0], frac[1]
        f1, f2 = d[t1] - math.floor(d[t1]), d[t2] - math.floor(d[t2])
        s1, s2 = slope(t1), slope(t2)
        up = min(1 - f1, f2)    # raise t1, lower t2
        down = min(f1, 1 - f2)  # lower t1, raise t2
        if up * (s1 - s2) >= down * (s2 - s1):
            d[t1] += up
            d[t2] -= up
        else:
            d[t1] -= down
            d[t2] += down
        snap()
        iterations += 1
    if frac:
        d[frac[0]] = round(d[frac[0]])
    return d.astype(int), iterations


# adaptive submodularity

@dataclass
class CheckResult:
    passed: bool
    checked: int
    witness: dict | None = None

    def to_json(self) -> dict:
        return asdict(self)


def _partial_states(rnd: TabularRound) -> list[PartialState]:
    seen = set()
    for h in np.nonzero(rnd.prob > 0)[0]:
        for mask in range(1 << rnd.n):
            seen.add(rnd.project(int(h), mask_items(mask)))
    return sorted(seen, key=lambda s: (len(s), s.obs))


def _check_rounds(instance: Instance, max_n: int, max_h: int):
    for t, rnd in enumerate(instance.rounds):
        if not isinstance(rnd, TabularRound):
            raise NotTabularError(f"round {t}: checks need tabular rounds")
        if rnd.n > max_n or int(np.count_nonzero(rnd.prob > 0)) > max_h:
            raise SizeGuardError(f"round {t}: exhaustive check limited to n <= {max_n}, |H| <= {max_h}")


def check_adaptive_submodularity(instance: Instance, tol: float = TOL, max_n: int = 4, max_h: int = 32) -> CheckResult:
    """Check that conditional marginals never grow as observations extend."""
    _check_rounds(instance, max_n, max_h)
    checked = 0
    for t, rnd in enumerate(instance.rounds):
        states = _partial_states(rnd)
        gains = {s: [rnd.exact_marginal(s, v) for v in range(rnd.n)] for s in states}
        for big in states:
            items = big.items
            for k in range(len(items) + 1):
                for sub in itertools.combinations(items, k):
                    small = big.restrict(sub)
                    for v in range(rnd.n):
                        checked += 1
                        if gains[small][v] < gains[big][v] - tol:
                            return CheckResult(False, checked, {
                                "t": t, "item": v, "smaller": small.key(), "larger": big.key(),
                                "gain_smaller": gains[small][v], "gain_larger": gains[big][v]})
    return CheckResult(True, checked)


def check_strong_adaptive_submodularity(instance: Instance, tol: float = TOL, max_n: int = 3,
                                        max_h: int = 32) -> CheckResult:
    """Adaptive submodularity plus: no k-item adaptive continuation after any observation
    gains more in expectation than the best fresh k-item adaptive policy."""
    base = check_adaptive_submodularity(instance, tol, max_n, max_h)
    if not base.passed:
        return base
    checked = base.checked
    for t, rnd in enumerate(instance.rounds):
        fresh = per_round_opt_table(rnd, rnd.n)
        memo: dict = {}

        def best(obs: PartialState, r: int) -> float:
            key = (obs.obs, r)
            if key not in memo:
                val = rnd.expected_value(obs)
                if r > 0:
                    for v in range(rnd.n):
                        if v not in obs:
                            val = max(val, math.fsum(p * best(obs.extend(v, s), r - 1) for s, p in rnd.outcomes(obs, v)))
                memo[key] = val
            return memo[key]

        for obs in _partial_states(rnd):
            base_val = rnd.expected_value(obs)
            for k in range(1, rnd.n + 1):
                checked += 1
                gain = best(obs, k) - base_val
                if gain > fresh[k] + tol:
                    return CheckResult(False, checked, {"t": t, "k": k, "observation": obs.key(),
                                                        "continuation_gain": gain, "fresh_optimum": float(fresh[k])})
    return CheckResult(True, checked)


# budget vectors and partially adaptive benchmarks

def feasible_budgets(T: int, n: int, B: int) -> Iterator[np.ndarray]:
    """All integer vectors with entries in [0, n] summing to B."""
    for vec in itertools.product(range(min(n, B) + 1), repeat=T):
        if sum(vec) == B:
            yield np.array(vec)


def best_partial_value(instance: Instance) -> tuple[float, np.ndarray]:
    """Max over feasible budget vectors of the sum of per-round exactly-b optima."""
    cap = min(instance.n, instance.B)
    tables = [per_round_opt_table(r, cap) for r in instance.rounds]
    best, arg = -math.inf, None
    for vec in feasible_budgets(instance.T, instance.n, instance.B):
        val = math.fsum(tables[t][vec[t]] for t in range(instance.T))
        if val > best:
            best, arg = val, vec
    return best, arg


def policy_round_usage(policy: ExactPolicy, instance: Instance) -> np.ndarray:
    """Expected number of items the stored policy selects in each round."""
    usage = np.zeros(instance.T)
    dist = {policy.B: 1.0}
    for t in range(instance.T):
        rnd = instance.rounds[t]
        nxt: dict[int, float] = {}
        for b, pb in dist.items():
            stack = [(PartialState(), pb)]
            while stack:
                obs, pr = stack.pop()
                a = policy.action(t, b, obs)
                if a == STOP:
                    usage[t] += pr * len(obs)
                    nxt[b - len(obs)] = nxt.get(b - len(obs), 0.0) + pr
                    continue
                for s, p in rnd.outcomes(obs, a):
                    stack.append((obs.extend(a, s), pr * p))
        dist = nxt
    return usage


# constructive instances

def concentrated_instance(T: int, t_star: int | None = None) -> Instance:
    """T rounds, n = B = T items, one state; only round ``t_star`` (default last) counts |S|."""
    if T < 2:
        raise ValueError("need T >= 2")
    t_star = T - 1 if t_star is None else t_star
    n = T
    masks = np.arange(1 << n)
    counts = np.array([bin(m).count("1") for m in masks], dtype=float)[:, None]
    local = np.zeros((1, n), dtype=int)
    rounds = tuple(TabularRound(local, [1.0], counts if t == t_star else np.zeros_like(counts)) for t in range(T))
    return Instance(T, T, rounds, lam=1.0, capital_lambda=1.0, kind="tabular")


def lookahead_trap_instance(n: int) -> Instance:
    """Two deterministic rounds, B = n + 1: item 0 is worth 1 in both, the rest 1/2 then 0."""
    if n < 2:
        raise ValueError("need n >= 2")
    first = ProbingRound(np.ones(n), Additive([1.0] + [0.5] * (n - 1)))
    second = ProbingRound(np.ones(n), Additive([1.0] + [0.0] * (n - 1)))
    return Instance(2, n + 1, (first, second), lam=1.0, capital_lambda=1.0, kind="probing")


def cross_round_restricted_greedy(instance: Instance, B: int | None = None, stream=0) -> float:
    """Greedy over (item, round) pairs limited to the current and the next round.

    Choosing a next-round item closes the current round.  When no pair has a
    positive expected gain the current round is closed without spending budget.
    Returns the realized value.
    """
    if not instance.is_exact():
        raise NotTabularError("needs rounds with exact conditioning")
    stream = as_stream(stream)
    B = instance.B if B is None else B
    sessions = [r.session(stream.spawn("state", t).rng) for t, r in enumerate(instance.rounds)]
    cur, left, total = 0, B, 0.0
    while left > 0 and cur < instance.T:
        best, pick = -math.inf, None
        for t in (cur, cur + 1):
            if t >= instance.T:
                continue
            sess = sessions[t]
            for v in sess.candidates():
                gain = instance.rounds[t].exact_marginal(sess.knowledge, v)
                if gain > best:
                    best, pick = gain, (t, v)
        if pick is None or best <= 0:
            total += sessions[cur].value()
            cur += 1
            continue
        t, v = pick
        if t != cur:
            total += sessions[cur].value()
            cur = t
        sessions[t].select(v)
        left -= 1
    if cur < instance.T:
        total += sessions[cur].value()
    return total


# budget adaptivity gap family

def _sqrt_exact(T: int) -> int:
    r = math.isqrt(T)
    if T < 4 or r * r != T:
        raise ValueError(f"T must be a perfect square >= 4, got {T}")
    return r


def gap_instance(T: int) -> Instance:
    """T rounds, n = B = T^1.5 items active w.p. 1/sqrt(T), score capped at 1 per round."""
    r = _sqrt_exact(T)
    n = T * r
    rnd = ProbingRound(np.full(n, 1.0 / r), BudgetAdditive(np.ones(n), cap=1.0))
    return Instance(T, n, tuple([rnd] * T), lam=1.0 / r, capital_lambda=1.0, kind="probing")


def gap_closed_form(T: int) -> float:
    """Expected value of spending sqrt(T) units in every round: T * (1 - (1 - 1/sqrt(T))^sqrt(T))."""
    r = _sqrt_exact(T)
    return T * (1.0 - (1.0 - 1.0 / r) ** r)


def adaptive_exact(T: int) -> float:
    """E[min(T, Binomial(B, p))] for the gap family, by summing the pmf."""
    r = _sqrt_exact(T)
    B, p = T * r, 1.0 / r
    k = np.arange(B + 1)
    logpmf = (math.lgamma(B + 1) - np.array([math.lgamma(x + 1) + math.lgamma(B - x + 1) for x in k])
              + k * math.log(p) + (B - k) * math.log1p(-p))
    return math.fsum(np.exp(logpmf) * np.minimum(k, T))


def hoeffding_ratio_bound(T: int) -> float:
    """Ratio bound obtained from P[Bin >= T - sqrt(T)] >= 1 - exp(-2 T / B)."""
    r = _sqrt_exact(T)
    return (1.0 - math.exp(-2.0 / r)) * (T - r) / gap_closed_form(T)


@dataclass
class GapReport:
    T: int
    n: int
    B: int
    p: float
    sigma_partial_closed_form: float
    sigma_adaptive_estimate: ValueEstimate
    sigma_adaptive_exact: float
    ratio: float
    ratio_std_error: float
    hoeffding_ratio_bound: float
    limit: float = LIMIT_RATIO

    def to_json(self) -> dict:
        d = asdict(self)
        d["sigma_adaptive_estimate"] = self.sigma_adaptive_estimate.to_json()
        return d

    def csv_row(self) -> str:
        return f"{self.T},{self.sigma_partial_closed_form!r},{self.sigma_adaptive_estimate.mean!r},{self.ratio!r}"


CSV_HEADER = "T,closed_form,estimate,ratio"


def gap_report(T: int, rollouts: int = 100_000, seed: int = 42) -> GapReport:
    """Fully adaptive value min(T, Binomial(B, p)) by simulation against the uniform-allocation closed form."""
    r = _sqrt_exact(T)
    n = T * r
    p = 1.0 / r
    closed = gap_closed_form(T)
    draws = Stream(seed).spawn("gap", T).rng.binomial(n, p, size=rollouts)
    vals = np.minimum(draws, T).astype(float)
    est = summarize(vals, float(T), seed)
    return GapReport(T, n, n, p, closed, est, adaptive_exact(T), est.mean / closed, est.std_error / closed,
                     hoeffding_ratio_bound(T))
