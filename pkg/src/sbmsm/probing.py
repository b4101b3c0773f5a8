"""Stochastic probing rounds: independent binary activations and a submodular score.

Each item is active with probability ``p[v]``, independently of the others and
of other rounds.  The round objective is ``g(active ∩ S)`` for one of three
closed monotone submodular families.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Instance, InstanceError, PartialState, SizeGuardError, TabularRound, to_mask

MAX_TABULAR_ITEMS = 20
MAX_TABLE_CELLS = 1 << 24


@dataclass(frozen=True)
class Additive:
    weights: tuple

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(x) for x in self.weights))

    type = "additive"

    @property
    def n(self) -> int:
        return len(self.weights)

    def value(self, items: Iterable[int]) -> float:
        return float(sum(self.weights[v] for v in items))

    def check(self) -> None:
        if min(self.weights, default=0.0) < 0:
            raise InstanceError("additive weights must be non-negative")

    def to_json(self) -> dict:
        return {"type": self.type, "weights": list(self.weights)}


@dataclass(frozen=True)
class BudgetAdditive:
    weights: tuple
    cap: float

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(x) for x in self.weights))
        object.__setattr__(self, "cap", float(self.cap))

    type = "budget_additive"

    @property
    def n(self) -> int:
        return len(self.weights)

    def value(self, items: Iterable[int]) -> float:
        return float(min(self.cap, sum(self.weights[v] for v in items)))

    def check(self) -> None:
        if min(self.weights, default=0.0) < 0 or self.cap < 0:
            raise InstanceError("budget-additive weights and cap must be non-negative")

    def to_json(self) -> dict:
        return {"type": self.type, "weights": list(self.weights), "cap": self.cap}


@dataclass(frozen=True)
class Coverage:
    """Weighted coverage: item v covers the universe elements ``covers[v]``."""

    element_weights: tuple
    covers: tuple

    def __post_init__(self):
        object.__setattr__(self, "element_weights", tuple(float(x) for x in self.element_weights))
        object.__setattr__(self, "covers", tuple(tuple(int(e) for e in c) for c in self.covers))

    type = "coverage"

    @property
    def n(self) -> int:
        return len(self.covers)

    def value(self, items: Iterable[int]) -> float:
        seen = set()
        for v in items:
            seen.update(self.covers[v])
        return float(sum(self.element_weights[e] for e in seen))

    def check(self) -> None:
        if min(self.element_weights, default=0.0) < 0:
            raise InstanceError("coverage element weights must be non-negative")
        m = len(self.element_weights)
        for v, c in enumerate(self.covers):
            if any(not 0 <= e < m for e in c):
                raise InstanceError(f"item {v} covers an unknown element")

    def to_json(self) -> dict:
        return {"type": self.type, "element_weights": list(self.element_weights),
                "covers": [list(c) for c in self.covers]}


def submodular_from_json(d: dict):
    kind = d.get("type")
    if kind == "additive":
        return Additive(d["weights"])
    if kind == "budget_additive":
        return BudgetAdditive(d["weights"], d["cap"])
    if kind == "coverage":
        return Coverage(d["element_weights"], d["covers"])
    raise InstanceError(f"unknown submodular family {kind!r}")


class ProbingRound:
    """One probing round; local states are 1 (active) and 0 (inactive)."""

    kind = "probing"

    def __init__(self, p: Sequence[float], g):
        self.p = np.asarray(p, dtype=float)
        self.g = g

    @property
    def n(self) -> int:
        return self.p.size

    def validate(self, label: str = "round") -> None:
        if np.any(~np.isfinite(self.p)) or np.any(self.p < 0) or np.any(self.p > 1):
            raise InstanceError(f"{label}: activation probabilities must lie in [0, 1]")
        if self.g.n != self.n:
            raise InstanceError(f"{label}: objective defined on {self.g.n} items, expected {self.n}")
        try:
            self.g.check()
        except InstanceError as exc:
            raise InstanceError(f"{label}: {exc}") from None

    def active(self, obs: PartialState) -> list[int]:
        return [v for v, s in obs.obs if s == 1]

    def evaluate(self, S, phi) -> float:
        items = S if not isinstance(S, (int, np.integer)) else [v for v in range(self.n) if int(S) >> v & 1]
        if isinstance(phi, dict):
            return self.g.value(v for v in items if phi[v])
        return self.g.value(v for v in items if phi[v])

    # exact conditioning (items are independent, so only the observed set matters)

    def outcomes(self, obs: PartialState, v: int) -> list[tuple[int, float]]:
        seen = obs.get(v)
        if seen is not None:
            return [(seen, 1.0)]
        pv = float(self.p[v])
        if pv <= 0.0:
            return [(0, 1.0)]
        if pv >= 1.0:
            return [(1, 1.0)]
        return [(0, 1.0 - pv), (1, pv)]

    def expected_value(self, obs: PartialState) -> float:
        return self.g.value(self.active(obs))

    def gain(self, obs: PartialState, v: int) -> float:
        """Increment of ``g`` if ``v`` turns out active, given the observation."""
        act = self.active(obs)
        return self.g.value(act + [v]) - self.g.value(act)

    def exact_marginal(self, obs: PartialState, v: int) -> float:
        if v in obs:
            return 0.0
        return float(self.p[v]) * self.gain(obs, v)

    # sampling

    def sample_state(self, rng: np.random.Generator) -> np.ndarray:
        return (rng.random(self.n) < self.p).astype(np.int8)

    def sample_extension(self, obs: PartialState, target: Iterable[int], rng: np.random.Generator) -> PartialState:
        new = sorted(set(target) - set(obs.items))
        out = obs
        for v in new:
            out = out.extend(v, int(rng.random() < self.p[v]))
        return out

    def increment_samples(self, obs: PartialState, v: int, q: int, rng: np.random.Generator) -> np.ndarray:
        if v in obs:
            return np.zeros(q)
        return (rng.random(q) < self.p[v]) * self.gain(obs, v)

    def session(self, rng: np.random.Generator) -> "ProbingSession":
        return ProbingSession(self, rng)

    # summaries

    def max_increment(self) -> float:
        # a submodular g gains the most when added to the empty set
        return max((self.g.value([v]) for v in range(self.n) if self.p[v] > 0), default=0.0)

    def single_item_values(self) -> np.ndarray:
        return np.array([self.p[v] * self.g.value([v]) for v in range(self.n)])

    def is_deterministic(self) -> bool:
        return bool(np.all((self.p == 0) | (self.p == 1)))

    def to_json(self) -> dict:
        return {"p": self.p.tolist(), "g": self.g.to_json()}


class ProbingSession:
    """Live play of a probing round; activation bits are drawn on first selection."""

    def __init__(self, rnd: ProbingRound, rng: np.random.Generator):
        self.round = rnd
        self.rng = rng
        self.knowledge = PartialState()
        self.selected: list[int] = []

    def candidates(self) -> list[int]:
        return [v for v in range(self.round.n) if v not in self.knowledge]

    def select(self, v: int) -> int:
        s = int(self.rng.random() < self.round.p[v])
        self.knowledge = self.knowledge.extend(v, s)
        self.selected.append(v)
        return s

    def value(self) -> float:
        return self.round.expected_value(self.knowledge)


def probing_round_to_tabular(rnd: ProbingRound, drop_impossible: bool = False) -> TabularRound:
    """Enumerate all activation vectors of a probing round as explicit global states.

    With ``drop_impossible`` the zero-probability vectors are left out, which
    keeps rounds with many deterministic items small.
    """
    n = rnd.n
    if n > MAX_TABULAR_ITEMS:
        raise SizeGuardError(f"probing to tabular needs n <= {MAX_TABULAR_ITEMS}, got {n}")
    bits = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1
    probs = np.prod(np.where(bits == 1, rnd.p, 1.0 - rnd.p), axis=1)
    if drop_impossible:
        keep = probs > 0
        bits, probs = bits[keep], probs[keep]
    if (1 << n) * len(probs) > MAX_TABLE_CELLS:
        raise SizeGuardError(f"objective table with {(1 << n) * len(probs)} cells exceeds {MAX_TABLE_CELLS}")
    masks = np.arange(1 << n)
    gv = np.array([rnd.g.value([v for v in range(n) if m >> v & 1]) for m in masks])
    act = bits @ (1 << np.arange(n))
    table = gv[masks[:, None] & act[None, :]]
    return TabularRound(bits, probs / probs.sum(), table, validate=False)


def probing_to_tabular(instance: Instance, drop_impossible: bool = False) -> Instance:
    rounds = tuple(probing_round_to_tabular(r, drop_impossible) for r in instance.rounds)
    return Instance(instance.T, instance.B, rounds, instance.lam, instance.capital_lambda, "tabular", instance.items)


def make_probing_instance(T: int, B: int, p, g, lam: float, capital_lambda: float, items=()) -> Instance:
    """Instance with the same probing round repeated, or per-round lists of ``p`` and ``g``."""
    ps = p if np.ndim(p) == 2 else [p] * T
    gs = g if isinstance(g, (list, tuple)) else [g] * T
    rounds = tuple(ProbingRound(ps[t], gs[t]) for t in range(T))
    return Instance(T, B, rounds, lam, capital_lambda, "probing", tuple(items))


def active_mask(obs: PartialState) -> int:
    return to_mask(v for v, s in obs.obs if s == 1)
