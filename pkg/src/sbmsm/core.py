"""Multi-round stochastic environment: instances, partial states, tabular rounds.

Rounds and items are 0-indexed throughout.  A round model owns the state
distribution and the objective of one round; an :class:`Instance` bundles T of
them with the budget and the boundedness constants.

Every round model implements the same duck-typed surface:

* ``evaluate(S, eta)``, ``sample_state(rng)``, ``sample_extension(obs, target, rng)``
* ``increment_samples(knowledge, v, q, rng)`` (Monte-Carlo marginal draws)
* ``session(rng)`` (live access for policies)

Tabular and probing rounds additionally support exact conditioning through
``outcomes``, ``expected_value`` and ``exact_marginal``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

STATE_TOL = 1e-9
MONO_TOL = 1e-12


class InstanceError(ValueError):
    """Malformed or inconsistent instance data."""


class SizeGuardError(ValueError):
    """Instance is larger than an enumeration routine accepts."""


class NotTabularError(TypeError):
    """Operation needs exact conditioning that the round model does not provide."""


class ZeroProbabilityError(ValueError):
    """Conditioning on an observation that has probability zero."""


def to_mask(S: Iterable[int] | int) -> int:
    if isinstance(S, (int, np.integer)):
        return int(S)
    mask = 0
    for v in S:
        mask |= 1 << int(v)
    return mask


def mask_items(mask: int) -> list[int]:
    out, v = [], 0
    while mask:
        if mask & 1:
            out.append(v)
        mask >>= 1
        v += 1
    return out


@dataclass(frozen=True)
class PartialState:
    """Observed local states of the items selected so far in one round.

    ``obs`` is kept sorted by item id, so equality and hashing ignore the order
    in which items were selected.
    """

    obs: tuple[tuple[int, int], ...] = ()
    t: int = 0

    def __post_init__(self):
        canon = tuple(sorted((int(v), int(s)) for v, s in self.obs))
        items = [v for v, _ in canon]
        if len(set(items)) != len(items):
            raise ValueError(f"item observed twice in {canon}")
        object.__setattr__(self, "obs", canon)

    @classmethod
    def from_dict(cls, mapping: dict[int, int], t: int = 0) -> "PartialState":
        return cls(tuple(mapping.items()), t)

    @property
    def items(self) -> tuple[int, ...]:
        return tuple(v for v, _ in self.obs)

    @property
    def mask(self) -> int:
        return to_mask(self.items)

    def __len__(self) -> int:
        return len(self.obs)

    def __contains__(self, v: int) -> bool:
        return any(u == v for u, _ in self.obs)

    def get(self, v: int) -> int | None:
        for u, s in self.obs:
            if u == v:
                return s
        return None

    def as_dict(self) -> dict[int, int]:
        return dict(self.obs)

    def extend(self, v: int, s: int) -> "PartialState":
        if v in self:
            raise ValueError(f"item {v} already observed")
        return PartialState(self.obs + ((v, s),), self.t)

    def restrict(self, items: Iterable[int]) -> "PartialState":
        keep = set(items)
        return PartialState(tuple(p for p in self.obs if p[0] in keep), self.t)

    def precedes(self, other: "PartialState") -> bool:
        """Sub-state relation: every observation here also appears in ``other``."""
        mine = other.as_dict()
        return all(mine.get(v) == s for v, s in self.obs)

    def key(self) -> str:
        return ",".join(f"{v}:{s}" for v, s in self.obs)

    @classmethod
    def from_key(cls, key: str, t: int = 0) -> "PartialState":
        if not key:
            return cls((), t)
        pairs = (p.split(":") for p in key.split(","))
        return cls(tuple((int(v), int(s)) for v, s in pairs), t)


class TabularRound:
    """Explicitly enumerated round: global states with probabilities and an objective table.

    ``local[h, v]`` is the local state of item ``v`` in global state ``h``;
    ``table[mask, h]`` is the objective of the subset encoded by ``mask``.
    """

    kind = "tabular"

    def __init__(self, local, prob, table, validate: bool = True):
        self.local = np.atleast_2d(np.asarray(local, dtype=np.int64))
        self.prob = np.asarray(prob, dtype=float)
        self.table = np.asarray(table, dtype=float)
        self._cond_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        if validate:
            self.validate()

    @property
    def n(self) -> int:
        return self.local.shape[1]

    @property
    def n_states(self) -> int:
        return self.local.shape[0]

    def validate(self, label: str = "round") -> None:
        H, n = self.local.shape
        if self.prob.shape != (H,):
            raise InstanceError(f"{label}: {H} states but {self.prob.size} probabilities")
        if self.table.shape != (1 << n, H):
            raise InstanceError(f"{label}: objective table must have shape {(1 << n, H)}")
        if np.any(self.prob < 0):
            raise InstanceError(f"{label}: negative state probability")
        total = float(self.prob.sum())
        if abs(total - 1.0) > STATE_TOL:
            raise InstanceError(f"{label}: state probabilities sum to {total:.12g}, not 1")
        if not np.all(np.isfinite(self.table)) or np.any(self.table < 0):
            raise InstanceError(f"{label}: objective values must be finite and non-negative")
        bad = np.nonzero(np.abs(self.table[0]) > MONO_TOL)[0]
        if bad.size:
            raise InstanceError(f"{label}: f(empty, state {int(bad[0])}) = {self.table[0, bad[0]]:g}, expected 0")
        masks = np.arange(1 << n)
        for v in range(n):
            bit = 1 << v
            lo = masks[(masks & bit) == 0]
            diff = self.table[lo | bit] - self.table[lo]
            if diff.min() < -MONO_TOL:
                i, h = np.unravel_index(int(np.argmin(diff)), diff.shape)
                S, S2 = int(lo[i]), int(lo[i] | bit)
                raise InstanceError(
                    f"{label}: not monotone: f(S={mask_items(S)}, state {h}) = {self.table[S, h]:g} > "
                    f"f(S'={mask_items(S2)}, state {h}) = {self.table[S2, h]:g}"
                )

    # exact conditioning

    def conditional(self, obs: PartialState) -> tuple[np.ndarray, np.ndarray]:
        """Indices and normalized weights of the positive-probability states consistent with ``obs``."""
        hit = self._cond_cache.get(obs.obs)
        if hit is not None:
            return hit
        ok = self.prob > 0
        for v, s in obs.obs:
            ok &= self.local[:, v] == s
        idx = np.nonzero(ok)[0]
        w = self.prob[idx]
        total = w.sum()
        if idx.size == 0 or total <= 0:
            raise ZeroProbabilityError(f"observation {obs.key() or '{}'} has probability zero")
        out = (idx, w / total)
        if len(self._cond_cache) < 200_000:
            self._cond_cache[obs.obs] = out
        return out

    def probability(self, obs: PartialState) -> float:
        ok = np.ones(self.n_states, dtype=bool)
        for v, s in obs.obs:
            ok &= self.local[:, v] == s
        return float(self.prob[ok].sum())

    def outcomes(self, obs: PartialState, v: int) -> list[tuple[int, float]]:
        """Distribution of the local state of ``v`` given ``obs``, as sorted (state, prob) pairs."""
        idx, w = self.conditional(obs)
        vals = self.local[idx, v]
        out = []
        for s in np.unique(vals):
            out.append((int(s), float(w[vals == s].sum())))
        return out

    def expected_value(self, obs: PartialState) -> float:
        idx, w = self.conditional(obs)
        return float(np.dot(w, self.table[obs.mask, idx]))

    def exact_marginal(self, obs: PartialState, v: int) -> float:
        idx, w = self.conditional(obs)
        if v in obs:
            return 0.0
        m = obs.mask
        return float(np.dot(w, self.table[m | (1 << v), idx] - self.table[m, idx]))

    # sampling

    def evaluate(self, S, eta: int) -> float:
        if not 0 <= int(eta) < self.n_states:
            raise InstanceError(f"unknown state id {eta}")
        mask = to_mask(S)
        if mask >> self.n:
            raise InstanceError(f"item out of range in {mask_items(mask)}")
        return float(self.table[mask, int(eta)])

    def sample_state(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_states, p=self.prob))

    def sample_states(self, q: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.n_states, size=q, p=self.prob)

    def project(self, h: int, items: Iterable[int], t: int = 0) -> PartialState:
        return PartialState(tuple((v, int(self.local[h, v])) for v in items), t)

    def sample_extension(self, obs: PartialState, target: Iterable[int], rng: np.random.Generator) -> PartialState:
        target = set(target) | set(obs.items)
        idx, w = self.conditional(obs)
        h = int(idx[rng.choice(idx.size, p=w)]) if idx.size > 1 else int(idx[0])
        return self.project(h, sorted(target), obs.t)

    def increment_samples(self, obs: PartialState, v: int, q: int, rng: np.random.Generator) -> np.ndarray:
        idx, w = self.conditional(obs)
        if v in obs:
            return np.zeros(q)
        hs = idx[rng.choice(idx.size, size=q, p=w)] if idx.size > 1 else np.full(q, idx[0])
        m = obs.mask
        return self.table[m | (1 << v), hs] - self.table[m, hs]

    def session(self, rng: np.random.Generator, state: int | None = None) -> "TabularSession":
        return TabularSession(self, rng, state)

    # summaries

    def max_increment(self) -> float:
        masks = np.arange(1 << self.n)
        best = 0.0
        for v in range(self.n):
            bit = 1 << v
            lo = masks[(masks & bit) == 0]
            best = max(best, float((self.table[lo | bit] - self.table[lo]).max()))
        return best

    def single_item_values(self) -> np.ndarray:
        return np.array([float(np.dot(self.prob, self.table[1 << v])) for v in range(self.n)])

    def is_deterministic(self) -> bool:
        return int(np.count_nonzero(self.prob > 0)) == 1


class TabularSession:
    """Live play of one tabular round; the hidden global state is drawn once up front."""

    def __init__(self, rnd: TabularRound, rng: np.random.Generator, state: int | None = None):
        self.round = rnd
        self.state = rnd.sample_state(rng) if state is None else int(state)
        self.knowledge = PartialState()
        self.selected: list[int] = []

    def candidates(self) -> list[int]:
        return [v for v in range(self.round.n) if v not in self.knowledge]

    def select(self, v: int) -> int:
        s = int(self.round.local[self.state, v])
        self.knowledge = self.knowledge.extend(v, s)
        self.selected.append(v)
        return s

    def value(self) -> float:
        return float(self.round.table[self.knowledge.mask, self.state])


def has_exact_conditioning(rnd) -> bool:
    return hasattr(rnd, "outcomes") and hasattr(rnd, "exact_marginal")


@dataclass(eq=False)
class Instance:
    """A multi-round instance: horizon, budget, items, per-round models, Λ and λ."""

    T: int
    B: int
    rounds: tuple
    lam: float
    capital_lambda: float
    kind: str = "tabular"
    items: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.rounds = tuple(self.rounds)
        if not self.items and self.rounds:
            self.items = tuple(str(v) for v in range(self.rounds[0].n))
        self.items = tuple(self.items)

    @property
    def n(self) -> int:
        return len(self.items)

    def round(self, t: int):
        if not 0 <= t < self.T:
            raise IndexError(f"round {t} outside 0..{self.T - 1}")
        return self.rounds[t]

    def validate(self, strict_constants: bool = True) -> None:
        if self.T < 1:
            raise InstanceError("horizon T must be >= 1")
        if self.n < 1:
            raise InstanceError("instance needs at least one item")
        if not 0 <= self.B < self.n * self.T:
            raise InstanceError(f"budget B={self.B} must satisfy 0 <= B < n*T = {self.n * self.T}")
        if len(self.rounds) != self.T:
            raise InstanceError(f"{len(self.rounds)} rounds given for T={self.T}")
        if not (self.lam > 0 and self.capital_lambda > 0):
            raise InstanceError("lambda and capital_lambda must be positive")
        if self.lam > self.capital_lambda:
            raise InstanceError(f"lambda={self.lam} exceeds capital_lambda={self.capital_lambda}")
        for t, rnd in enumerate(self.rounds):
            if rnd.n != self.n:
                raise InstanceError(f"round {t}: {rnd.n} items, header says {self.n}")
            if hasattr(rnd, "validate"):
                rnd.validate(f"round {t}")
        if strict_constants:
            self._validate_constants()

    def _validate_constants(self) -> None:
        tol = 1e-9
        hooks = [r for r in self.rounds if hasattr(r, "check_constants")]
        if hooks:
            for t, r in enumerate(hooks):
                r.check_constants(self.lam, self.capital_lambda, f"round {t}")
            if not any(r.has_single_value_at_least(self.lam) for r in hooks):
                raise InstanceError(f"no (round, item) has weight >= lambda={self.lam}")
            return
        worst = max((r.max_increment() for r in self.rounds if hasattr(r, "max_increment")), default=0.0)
        if worst > self.capital_lambda + tol:
            raise InstanceError(f"capital_lambda={self.capital_lambda} below a single-item increment {worst:g}")
        singles = [r.single_item_values().max() for r in self.rounds if hasattr(r, "single_item_values")]
        if singles and len(singles) == self.T and max(singles) < self.lam - tol:
            raise InstanceError(f"no (round, item) has expected single-item value >= lambda={self.lam}")

    # env-core operations

    def eval_objective(self, t: int, S, eta) -> float:
        return self.round(t).evaluate(S, eta)

    def sample_state(self, t: int, rng: np.random.Generator):
        return self.round(t).sample_state(rng)

    def sample_extension(self, t: int, observed, target: Iterable[int], rng: np.random.Generator):
        return self.round(t).sample_extension(observed, target, rng)

    def exact_marginal(self, t: int, v: int, observed: PartialState) -> float:
        rnd = self.round(t)
        if not has_exact_conditioning(rnd):
            raise NotTabularError(f"round {t} ({rnd.kind}) does not support exact conditioning")
        if not 0 <= v < self.n:
            raise InstanceError(f"item {v} out of range")
        return rnd.exact_marginal(observed, v)

    def is_exact(self) -> bool:
        return all(has_exact_conditioning(r) for r in self.rounds)

    def value_range(self) -> float:
        """Upper end of the per-rollout value range, T * n * Λ."""
        return self.T * self.n * self.capital_lambda


def tabular_round(states: Sequence[tuple[Sequence[int], float]], objective, n: int, validate: bool = True) -> TabularRound:
    """Build a round from ``[(local_vector, prob), ...]`` and ``objective(mask, h) -> value``."""
    local = np.array([list(s) for s, _ in states], dtype=np.int64).reshape(len(states), n)
    prob = np.array([p for _, p in states], dtype=float)
    table = np.array([[objective(m, h) for h in range(len(states))] for m in range(1 << n)], dtype=float)
    return TabularRound(local, prob, table, validate=validate)
