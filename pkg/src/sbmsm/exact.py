"""Exact optimal adaptive policies by backward induction.

``R[t, b]`` is the best expected value from rounds ``t..T-1`` with ``b`` budget
units left; ``R[T, :] = 0``.  Each cell is the value of a single-round game in
which the policy either stops (collecting the conditional expected objective
plus the continuation value of the unspent budget) or selects another item and
nature reveals its local state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    Instance, NotTabularError, PartialState, SizeGuardError, TabularRound, has_exact_conditioning,
)

STOP = -1
MAX_N, MAX_H, MAX_B = 8, 64, 16


class PolicyMismatchError(RuntimeError):
    """A rollout reached a node the stored policy has no action for."""


def positive_states(rnd) -> int:
    if isinstance(rnd, TabularRound):
        return int(np.count_nonzero(rnd.prob > 0))
    p = getattr(rnd, "p", None)
    if p is not None:
        return 1 << int(np.count_nonzero((p > 0) & (p < 1)))
    return 0


def modular_weights(rnd) -> np.ndarray | None:
    """Per-item values if the round is deterministic and its objective is additive, else None."""
    if not rnd.is_deterministic():
        return None
    if isinstance(rnd, TabularRound):
        h = int(np.argmax(rnd.prob))
        col = rnd.table[:, h]
        w = np.array([col[1 << v] for v in range(rnd.n)])
        masks = np.arange(1 << rnd.n)
        bits = (masks[:, None] >> np.arange(rnd.n)) & 1
        return w if np.allclose(bits @ w, col, rtol=0, atol=1e-12) else None
    g = getattr(rnd, "g", None)
    if g is not None and getattr(g, "type", None) == "additive":
        return np.asarray(g.weights) * rnd.p
    return None


def deterministic_state(rnd, v: int) -> int:
    if isinstance(rnd, TabularRound):
        return int(rnd.local[int(np.argmax(rnd.prob)), v])
    return int(rnd.p[v] >= 1)


def _closed_form(rnd, w: np.ndarray, b: int, cont: Sequence[float], forced: bool):
    order = sorted(range(rnd.n), key=lambda v: (-w[v], v))
    prefix = np.concatenate([[0.0], np.cumsum([w[v] for v in order])])
    top = min(b, rnd.n)
    if forced:
        best_i = top
    else:
        totals = [prefix[i] + cont[b - i] for i in range(top + 1)]
        best_i = int(np.argmax(totals))  # first maximum, matching STOP-before-items
    policy = {}
    obs = PartialState()
    for i in range(best_i):
        v = order[i]
        policy[obs] = v
        obs = obs.extend(v, deterministic_state(rnd, v))
    policy[obs] = STOP
    return float(prefix[best_i] + (0.0 if forced else cont[b - best_i])), policy


def solve_single_round(rnd, b: int, cont: Sequence[float], memoize: bool = True, forced: bool = False,
                       closed_form: bool = True) -> tuple[float, dict]:
    """Best value of one round with budget ``b`` and continuation ``cont[0..b]``.

    Returns the value and a map from canonical partial state to action
    (``STOP`` or an item).  With ``forced`` the policy must select exactly
    ``min(b, n)`` items and ``cont`` is ignored.
    """
    if not has_exact_conditioning(rnd):
        raise NotTabularError(f"{rnd.kind} rounds do not support exact conditioning")
    if len(cont) < b + 1 and not forced:
        raise ValueError("continuation array must cover budgets 0..b")
    if closed_form:
        w = modular_weights(rnd)
        if w is not None:
            return _closed_form(rnd, w, b, cont, forced)
    n = rnd.n
    target = min(b, n)
    policy: dict[PartialState, int] = {}
    memo: dict[tuple, float] = {}

    def value(obs: PartialState) -> float:
        if memoize and obs.obs in memo:
            return memo[obs.obs]
        i = len(obs)
        if forced:
            best, act = (rnd.expected_value(obs), STOP) if i >= target else (-math.inf, STOP)
        else:
            best, act = rnd.expected_value(obs) + cont[b - i], STOP
        if i < target:
            for v in range(n):
                if v in obs:
                    continue
                val = 0.0
                for s, pr in rnd.outcomes(obs, v):
                    val += pr * value(obs.extend(v, s))
                if val > best:
                    best, act = val, v
        policy[obs] = act
        if memoize:
            memo[obs.obs] = best
        return best

    return float(value(PartialState())), policy


@dataclass
class ExactPolicy:
    """Value table plus the optimal action at every solved (round, budget, observation) node."""

    T: int
    B: int
    R: np.ndarray
    actions: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(self.R[0, self.B])

    def action(self, t: int, b: int, obs: PartialState) -> int:
        try:
            return self.actions[(t, b, obs.obs)]
        except KeyError:
            raise PolicyMismatchError(f"no action stored for round {t}, budget {b}, observation {obs.key() or '{}'}") from None

    def to_json(self) -> dict:
        acts = {f"{t}|{b}|{PartialState(obs).key()}": ("STOP" if a == STOP else a)
                for (t, b, obs), a in self.actions.items()}
        return {"T": self.T, "B": self.B, "R": self.R.tolist(), "actions": acts}

    @classmethod
    def from_json(cls, d: dict) -> "ExactPolicy":
        actions = {}
        for key, a in d["actions"].items():
            t, b, obs = key.split("|", 2)
            actions[(int(t), int(b), PartialState.from_key(obs).obs)] = STOP if a == "STOP" else int(a)
        return cls(int(d["T"]), int(d["B"]), np.array(d["R"], dtype=float), actions)


def check_guard(instance: Instance, max_n=MAX_N, max_h=MAX_H, max_b=MAX_B) -> None:
    """Refuse instances whose rounds need enumeration beyond the configured sizes."""
    for t, rnd in enumerate(instance.rounds):
        if not has_exact_conditioning(rnd):
            raise NotTabularError(f"round {t} ({rnd.kind}) does not support exact solving")
        if modular_weights(rnd) is not None:
            continue
        if rnd.n > max_n or positive_states(rnd) > max_h or instance.B > max_b:
            raise SizeGuardError(
                f"round {t}: exact solving limited to n <= {max_n}, |H| <= {max_h}, B <= {max_b} "
                f"(got n={rnd.n}, |H|={positive_states(rnd)}, B={instance.B})")


def solve_dp(instance: Instance, max_n=MAX_N, max_h=MAX_H, max_b=MAX_B, memoize: bool = True) -> ExactPolicy:
    check_guard(instance, max_n, max_h, max_b)
    T, B = instance.T, instance.B
    R = np.zeros((T + 1, B + 1))
    actions = {}
    for t in range(T - 1, -1, -1):
        rnd = instance.rounds[t]
        for b in range(B + 1):
            R[t, b], pol = solve_single_round(rnd, b, R[t + 1, : b + 1], memoize=memoize)
            for obs, a in pol.items():
                actions[(t, b, obs.obs)] = a
    return ExactPolicy(T, B, R, actions)


def execute_exact_policy(policy: ExactPolicy, instance: Instance, rng: np.random.Generator):
    """One rollout; returns the per-round selected items and the realized total value."""
    b = policy.B
    total = 0.0
    chosen = []
    for t in range(instance.T):
        sess = instance.rounds[t].session(rng)
        b_start = b
        while True:
            a = policy.action(t, b_start, sess.knowledge)
            if a == STOP:
                break
            sess.select(a)
        total += sess.value()
        chosen.append(list(sess.selected))
        b -= len(sess.selected)
    return chosen, total


def tree_stats(rnd, b: int, max_n: int = MAX_N) -> dict:
    """Node counts of the raw single-round game tree, indexed by selection sequences.

    Every decision node has one STOP leaf and one chance child per selectable
    item; a chance node has one decision child per possible local state.
    Subtree sizes depend only on the canonical observation, so they are cached
    on it while still counting every sequence separately.
    """
    if not has_exact_conditioning(rnd):
        raise NotTabularError(f"{rnd.kind} rounds do not support exact conditioning")
    if rnd.n > max_n:
        raise SizeGuardError(f"tree statistics limited to n <= {max_n}")
    target = min(b, rnd.n)
    cache: dict[tuple, tuple[int, int, int]] = {}

    def count(obs: PartialState) -> tuple[int, int, int]:
        hit = cache.get(obs.obs)
        if hit is not None:
            return hit
        policy_nodes, nature_nodes, leaves = 1, 0, 1
        if len(obs) < target:
            for v in range(rnd.n):
                if v in obs:
                    continue
                nature_nodes += 1
                for s, _ in rnd.outcomes(obs, v):
                    p, c, l = count(obs.extend(v, s))
                    policy_nodes += p
                    nature_nodes += c
                    leaves += l
        cache[obs.obs] = (policy_nodes, nature_nodes, leaves)
        return cache[obs.obs]

    p, c, l = count(PartialState())
    return {"policy_nodes": p, "nature_nodes": c, "leaves": l}


def leaf_bound(n: int, H: int) -> int:
    """Number of selection sequences of distinct items times the number of states."""
    return sum(math.factorial(n) // math.factorial(n - k) for k in range(n + 1)) * H


def per_round_opt_table(rnd, b_max: int) -> np.ndarray:
    """Best adaptive value of one round when exactly ``min(b, n)`` items must be selected."""
    return np.array([solve_single_round(rnd, b, [], forced=True)[0] for b in range(b_max + 1)])
