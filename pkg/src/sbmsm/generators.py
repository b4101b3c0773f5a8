"""Random small instances for property tests and cross-checks.

Three families of tabular rounds:

* ``probing``: an independent-activation round with a random submodular score,
  enumerated into explicit states (adaptive submodular by construction);
* ``influence``: a tiny cascade graph enumerated over live-edge patterns
  (adaptive submodular by construction);
* ``generic``: arbitrary dependent states with a random monotone objective,
  which may or may not be adaptive submodular.
"""
from __future__ import annotations

import numpy as np

from .core import Instance, TabularRound
from .influence import InfluenceGraph, InfluenceRound, round_to_tabular
from .probing import Additive, BudgetAdditive, Coverage, ProbingRound, probing_round_to_tabular

FAMILIES = ("probing", "influence", "generic")
PROBS = (0.0, 0.25, 0.5, 0.75, 1.0)


def random_submodular(rng: np.random.Generator, n: int):
    kind = int(rng.integers(3))
    w = rng.integers(1, 5, size=n) / 2.0
    if kind == 0:
        return Additive(w)
    if kind == 1:
        return BudgetAdditive(w, cap=float(rng.integers(1, 5)) / 2.0)
    m = 3
    return Coverage(rng.integers(1, 4, size=m) / 2.0,
                    [sorted(set(rng.integers(0, m, size=2).tolist())) for _ in range(n)])


def random_probing_round(rng: np.random.Generator, n: int, H: int) -> TabularRound:
    # keep at most log2(H) fractional activation probabilities
    k_max = min(n, int(np.log2(H)))
    p = rng.choice(PROBS, size=n)
    frac = [v for v in range(n) if 0 < p[v] < 1]
    for v in frac[k_max:]:
        p[v] = float(rng.integers(2))
    return probing_round_to_tabular(ProbingRound(p, random_submodular(rng, n)), drop_impossible=True)


def random_influence_round(rng: np.random.Generator, n: int, H: int) -> TabularRound:
    e_max = min(int(np.log2(H)), n * (n - 1))
    pairs = [(u, v) for u in range(n) for v in range(n) if u != v]
    E = int(rng.integers(0, e_max + 1)) if pairs else 0
    pick = sorted(rng.choice(len(pairs), size=E, replace=False).tolist()) if E else []
    edges = [pairs[i] for i in pick]
    g = InfluenceGraph(n, edges, rng.choice(PROBS[1:4], size=(1, E)), rng.integers(0, 3, size=(1, n)) / 2.0)
    return round_to_tabular(InfluenceRound(g, 0))


def random_generic_round(rng: np.random.Generator, n: int, H: int) -> TabularRound:
    h = int(rng.integers(1, H + 1))
    local = rng.integers(0, 2, size=(h, n))
    prob = rng.integers(1, 5, size=h).astype(float)
    prob /= prob.sum()
    # per-state weighted coverage: monotone for every state, dependence across items via the state
    m = 3
    elem = rng.integers(0, 4, size=(h, m)) / 2.0
    covers = rng.integers(0, 2, size=(h, n, m)).astype(bool)
    table = np.zeros((1 << n, h))
    for mask in range(1, 1 << n):
        items = [v for v in range(n) if mask >> v & 1]
        cov = covers[:, items, :].any(axis=1)
        table[mask] = (cov * elem).sum(axis=1)
    return TabularRound(local, prob, table)


def random_tabular_round(rng: np.random.Generator, n: int, H: int, family: str | None = None) -> TabularRound:
    family = family or FAMILIES[int(rng.integers(len(FAMILIES)))]
    if family == "probing":
        return random_probing_round(rng, n, H)
    if family == "influence":
        return random_influence_round(rng, n, H)
    return random_generic_round(rng, n, H)


def constants_for(rounds) -> tuple[float, float]:
    """Tight Λ (largest single increment) and λ (largest expected singleton value)."""
    cap = max(r.max_increment() for r in rounds)
    lam = max(float(r.single_item_values().max()) for r in rounds)
    return lam, cap


def random_tabular_instance(rng: np.random.Generator, T: int = 2, n: int = 3, H: int = 4, B: int | None = None,
                            family: str | None = None, max_tries: int = 100) -> Instance:
    """A validated tabular instance; rounds may mix families unless ``family`` is fixed."""
    for _ in range(max_tries):
        rounds = tuple(random_tabular_round(rng, n, H, family) for _ in range(T))
        lam, cap = constants_for(rounds)
        if lam <= 0:
            continue
        b = int(rng.integers(0, min(n * T - 1, 3) + 1)) if B is None else B
        inst = Instance(T, b, rounds, lam, cap, "tabular")
        inst.validate()
        return inst
    raise RuntimeError("could not draw an instance with a positive singleton value")


def random_instance_set(seed: int, count: int, max_n: int = 3, max_T: int = 3, max_H: int = 4,
                        max_B: int = 3) -> list[Instance]:
    """Deterministic list of small random instances covering all sizes up to the given limits."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = T = 1
        while n * T < 2:  # B must satisfy 1 <= B < n * T
            n = int(rng.integers(1, max_n + 1))
            T = int(rng.integers(1, max_T + 1))
        B = int(rng.integers(1, min(max_B, n * T - 1) + 1))
        out.append(random_tabular_instance(rng, T, n, max_H, B))
    return out
