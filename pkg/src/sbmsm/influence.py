"""Multi-round influence maximization under the independent cascade model.

A round's hidden state is a live-edge graph: each directed edge is live
independently with its round probability.  Seeding node ``v`` activates every
node reachable from ``v`` through live edges without passing through nodes
already active this round.  Partial knowledge is kept as revealed edge
statuses, so conditioning amounts to fixing the revealed edges and drawing the
rest fresh.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Instance, InstanceError, SizeGuardError, TabularRound

UNREVEALED, DEAD, LIVE = -1, 0, 1


class InfluenceGraph:
    """Directed graph with per-round edge probabilities ``p[t, e]`` and node weights ``w[t, v]``."""

    def __init__(self, n: int, edges, p, w):
        self.n = int(n)
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.p = np.atleast_2d(np.asarray(p, dtype=float))
        self.w = np.atleast_2d(np.asarray(w, dtype=float))
        self.out: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        for e, (u, v) in enumerate(self.edges.tolist()):
            if 0 <= u < self.n:
                self.out[u].append((e, v))

    @property
    def T(self) -> int:
        return self.w.shape[0]

    def validate(self) -> None:
        E = len(self.edges)
        if self.n < 1:
            raise InstanceError("graph needs at least one node")
        if E and (self.edges.min() < 0 or self.edges.max() >= self.n):
            raise InstanceError("edge endpoint out of range")
        if len({tuple(e) for e in self.edges.tolist()}) != E:
            raise InstanceError("duplicate edge")
        if self.p.shape != (self.T, E) or self.w.shape[1] != self.n:
            raise InstanceError(f"expected p with shape {(self.T, E)} and w with {self.n} columns")
        if np.any(~np.isfinite(self.p)) or np.any(self.p < 0) or np.any(self.p > 1):
            raise InstanceError("edge probabilities must lie in [0, 1]")
        if np.any(~np.isfinite(self.w)) or np.any(self.w < 0):
            raise InstanceError("node weights must be non-negative")

    def to_json(self) -> dict:
        return {"nodes": self.n, "edges": self.edges.tolist(), "p": self.p.tolist(), "w": self.w.tolist()}


def sample_live_edges(graph: InfluenceGraph, t: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random(len(graph.edges)) < graph.p[t]


def diffuse(graph: InfluenceGraph, t: int, status: np.ndarray, active: np.ndarray, seed: int,
            rng: np.random.Generator) -> tuple[set[int], np.ndarray]:
    """Cascade from ``seed`` over nodes not yet active; unrevealed edges are drawn on demand.

    Returns the activated set (including the seed) and a copy of ``status``
    with every examined edge recorded.
    """
    if active[seed]:
        raise ValueError(f"seed {seed} is already active")
    status = status.copy()
    reached = {seed}
    queue = deque([seed])
    pt = graph.p[t]
    while queue:
        u = queue.popleft()
        for e, x in graph.out[u]:
            if active[x] or x in reached:
                continue
            if status[e] == UNREVEALED:
                status[e] = LIVE if rng.random() < pt[e] else DEAD
            if status[e] == LIVE:
                reached.add(x)
                queue.append(x)
    return reached, status


def influence_eval(graph: InfluenceGraph, t: int, activations) -> float:
    union: set[int] = set()
    for a in activations:
        union.update(a)
    return float(sum(graph.w[t, v] for v in union))


def reach(graph: InfluenceGraph, live: np.ndarray, sources) -> set[int]:
    seen = set(int(s) for s in sources)
    queue = deque(seen)
    while queue:
        u = queue.popleft()
        for e, x in graph.out[u]:
            if live[e] and x not in seen:
                seen.add(x)
                queue.append(x)
    return seen


@dataclass(frozen=True, eq=False)
class InfluenceKnowledge:
    """Revealed edge statuses, active nodes and seeds of one round so far."""

    status: np.ndarray
    active: np.ndarray
    seeds: tuple = ()

    @classmethod
    def empty(cls, graph: InfluenceGraph) -> "InfluenceKnowledge":
        return cls(np.full(len(graph.edges), UNREVEALED, dtype=np.int8), np.zeros(graph.n, dtype=bool))

    @property
    def items(self) -> tuple:
        return self.seeds

    def __contains__(self, v: int) -> bool:
        return bool(self.active[v])

    def __len__(self) -> int:
        return len(self.seeds)

    def seed_with(self, graph, t, v, rng) -> tuple["InfluenceKnowledge", frozenset]:
        got, status = diffuse(graph, t, self.status, self.active, v, rng)
        active = self.active.copy()
        active[list(got)] = True
        return InfluenceKnowledge(status, active, self.seeds + (int(v),)), frozenset(got)

    def seed(self, graph, t, v, rng) -> "InfluenceKnowledge":
        return self.seed_with(graph, t, v, rng)[0]

    def key(self) -> bytes:
        return self.status.tobytes() + np.packbits(self.active).tobytes()

    def __eq__(self, other) -> bool:
        return isinstance(other, InfluenceKnowledge) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())


class InfluenceRound:
    """Round ``t`` of an influence graph, sampled lazily through revealed edges."""

    kind = "influence"

    def __init__(self, graph: InfluenceGraph, t: int):
        self.graph = graph
        self.t = int(t)

    @property
    def n(self) -> int:
        return self.graph.n

    def validate(self, label: str = "round") -> None:
        try:
            self.graph.validate()
        except InstanceError as exc:
            raise InstanceError(f"{label}: {exc}") from None
        if not 0 <= self.t < self.graph.T:
            raise InstanceError(f"{label}: graph has no parameters for round {self.t}")

    def check_constants(self, lam: float, capital_lambda: float, label: str = "round") -> None:
        bound = self.n * float(self.graph.w[self.t].max())
        if capital_lambda < bound - 1e-9:
            raise InstanceError(f"{label}: capital_lambda={capital_lambda} below n * max weight = {bound:g}")

    def has_single_value_at_least(self, lam: float) -> bool:
        # a seed always activates itself
        return bool(self.graph.w[self.t].max() >= lam - 1e-9)

    def evaluate(self, S, live) -> float:
        return influence_eval(self.graph, self.t, [reach(self.graph, live, S)])

    def sample_state(self, rng: np.random.Generator) -> np.ndarray:
        return sample_live_edges(self.graph, self.t, rng)

    def empty_knowledge(self) -> InfluenceKnowledge:
        return InfluenceKnowledge.empty(self.graph)

    def sample_extension(self, knowledge: InfluenceKnowledge, target, rng) -> InfluenceKnowledge:
        for v in sorted(set(target) - set(knowledge.seeds)):
            if not knowledge.active[v]:
                knowledge = knowledge.seed(self.graph, self.t, v, rng)
        return knowledge

    def increment_samples(self, knowledge: InfluenceKnowledge, v: int, q: int, rng) -> np.ndarray:
        if knowledge.active[v]:
            return np.zeros(q)
        w = self.graph.w[self.t]
        out = np.empty(q)
        for k in range(q):
            got, _ = diffuse(self.graph, self.t, knowledge.status, knowledge.active, v, rng)
            out[k] = sum(w[x] for x in got)
        return out

    def session(self, rng: np.random.Generator) -> "InfluenceSession":
        return InfluenceSession(self, rng)


class InfluenceSession:
    """Live play of an influence round; already active nodes cannot be seeded."""

    def __init__(self, rnd: InfluenceRound, rng: np.random.Generator):
        self.round = rnd
        self.rng = rng
        self.knowledge = rnd.empty_knowledge()
        self.selected: list[int] = []

    def candidates(self) -> list[int]:
        return [int(v) for v in np.nonzero(~self.knowledge.active)[0]]

    def select(self, v: int) -> frozenset:
        self.knowledge, got = self.knowledge.seed_with(self.round.graph, self.round.t, v, self.rng)
        self.selected.append(v)
        return got

    def value(self) -> float:
        return float(self.round.graph.w[self.round.t][self.knowledge.active].sum())


def round_to_tabular(rnd: InfluenceRound, max_edges: int = 12) -> TabularRound:
    """Enumerate live-edge patterns; the local state of a node is its reachable set (as a bitmask).

    Patterns giving identical local vectors are merged, since the objective
    depends on the pattern only through the reachable sets.
    """
    g, t = rnd.graph, rnd.t
    E, n = len(g.edges), g.n
    if E > max_edges:
        raise SizeGuardError(f"tabular conversion enumerates 2^{E} patterns; limit is 2^{max_edges}")
    merged: dict[tuple, float] = {}
    for pattern in range(1 << E):
        live = np.array([(pattern >> e) & 1 for e in range(E)], dtype=bool)
        pr = float(np.prod(np.where(live, g.p[t], 1.0 - g.p[t]))) if E else 1.0
        if pr <= 0:
            continue
        vec = tuple(sum(1 << x for x in reach(g, live, [v])) for v in range(n))
        merged[vec] = merged.get(vec, 0.0) + pr
    local = np.array(sorted(merged), dtype=np.int64)
    prob = np.array([merged[tuple(row)] for row in local.tolist()])
    w = g.w[t]
    node_val = np.array([sum(w[x] for x in range(n) if m >> x & 1) for m in range(1 << n)])
    # union of reach masks, built from the set without its lowest item
    unions = np.zeros((1 << n, len(local)), dtype=np.int64)
    for mask in range(1, 1 << n):
        v = (mask & -mask).bit_length() - 1
        unions[mask] = unions[mask & (mask - 1)] | local[:, v]
    table = node_val[unions]
    return TabularRound(local, prob / prob.sum(), table, validate=False)


def influence_to_tabular(instance: Instance, max_edges: int = 12) -> Instance:
    rounds = tuple(round_to_tabular(r, max_edges) for r in instance.rounds)
    return Instance(instance.T, instance.B, rounds, instance.lam, instance.capital_lambda, "tabular", instance.items)


def influence_instance(graph: InfluenceGraph, B: int, lam: float, capital_lambda: float | None = None,
                       items=()) -> Instance:
    """Instance with one round per row of the graph's parameters; Λ defaults to n times the largest weight."""
    if capital_lambda is None:
        capital_lambda = graph.n * float(graph.w.max())
    rounds = tuple(InfluenceRound(graph, t) for t in range(graph.T))
    return Instance(graph.T, B, rounds, lam, capital_lambda, "influence", tuple(items))


def read_edge_list(path, n: int | None = None, T: int | None = None, weights=None) -> InfluenceGraph:
    """Parse lines ``u v p_1 ... p_T``; blank lines and ``#`` comments are skipped."""
    edges, probs = [], []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        edges.append((int(parts[0]), int(parts[1])))
        probs.append([float(x) for x in parts[2:]])
    if T is None:
        T = len(probs[0]) if probs else 1
    if any(len(row) != T for row in probs):
        raise InstanceError(f"every edge line needs {T} probabilities")
    if n is None:
        n = 1 + max((max(e) for e in edges), default=0)
    p = np.array(probs, dtype=float).T.reshape(T, len(edges))
    w = np.ones((T, n)) if weights is None else np.asarray(weights, dtype=float)
    return InfluenceGraph(n, edges, p, w)
