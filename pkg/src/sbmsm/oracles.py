"""Monte-Carlo estimation oracles with Hoeffding-style sample counts.

``oracle1`` estimates the conditional expected increment of one item.
``oracle2`` estimates the expected increment gained at the i-th step of the
single-round greedy policy, by running the greedy policy end to end.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Instance, NotTabularError, TabularRound, has_exact_conditioning
from .streams import Stream, as_stream, chunk_sizes

DEFAULT_CEILING = 10**7
CEILING_ENV = "SBMSM_SAMPLE_CEILING"


def _check(delta: float, xi: float) -> None:
    if not (delta > 0 and xi > 0):
        raise ValueError(f"delta and xi must be positive (got delta={delta}, xi={xi})")


def sample_bound1(delta: float, xi: float, n: int, capital_lambda: float) -> float:
    _check(delta, xi)
    return 2.0 * capital_lambda**2 / delta**2 * math.log(2.0 * n / xi)


def q_oracle1(delta: float, xi: float, n: int, capital_lambda: float) -> int:
    """Samples per item so every estimate is within delta/2 with probability 1 - xi."""
    return max(1, math.ceil(sample_bound1(delta, xi, n, capital_lambda)))


def sample_bound2(delta: float, xi: float, n: int, T: int, capital_lambda: float) -> float:
    _check(delta, xi)
    return capital_lambda**2 / (2.0 * delta**2) * math.log(2.0 * T * n / xi)


def q_oracle2(delta: float, xi: float, n: int, T: int, capital_lambda: float) -> int:
    """Greedy rollouts per round so all step estimates are within delta with probability 1 - xi."""
    return max(1, math.ceil(sample_bound2(delta, xi, n, T, capital_lambda)))


def default_ceiling() -> int:
    return int(os.environ.get(CEILING_ENV, DEFAULT_CEILING))


@dataclass(frozen=True)
class OracleConfig:
    """Accuracy and mode of the estimation oracles.

    ``q``/``q2`` override the computed sample counts.  ``exact`` mode uses
    closed-form conditioning and needs rounds that support it.
    """

    delta: float
    xi: float
    mode: str = "monte_carlo"
    q: int | None = None
    q2: int | None = None
    ceiling: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.mode not in ("monte_carlo", "exact"):
            raise ValueError(f"unknown oracle mode {self.mode!r}")
        if self.mode == "monte_carlo":
            if self.q is None or self.q2 is None:
                _check(self.delta, self.xi)
            if self.xi >= 1:
                raise ValueError("xi must be below 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def exact(self) -> bool:
        return self.mode == "exact"

    def _clamp(self, q: int, what: str) -> int:
        cap = self.ceiling if self.ceiling is not None else default_ceiling()
        if q > cap:
            warnings.warn(f"{what} sample count {q} clamped to ceiling {cap}", UserWarning, stacklevel=3)
            return cap
        return q

    def q1(self, n: int, capital_lambda: float) -> int:
        if self.q is not None:
            return self.q
        return self._clamp(q_oracle1(self.delta, self.xi, n, capital_lambda), "oracle1")

    def q2_for(self, n: int, T: int, capital_lambda: float) -> int:
        if self.q2 is not None:
            return self.q2
        return self._clamp(q_oracle2(self.delta, self.xi, n, T, capital_lambda), "oracle2")

    def check_instance(self, instance: Instance) -> None:
        if self.exact and not instance.is_exact():
            raise NotTabularError("exact oracle mode needs rounds with exact conditioning")


def _generator(source) -> np.random.Generator:
    return source.rng if isinstance(source, Stream) else source


def oracle1(q: int, instance: Instance, t: int, observed, v: int, rng, workers: int = 1,
            exact: bool = False) -> float:
    """Mean of ``q`` conditional increment samples of item ``v`` (or the exact value)."""
    rnd = instance.round(t)
    if exact:
        return instance.exact_marginal(t, v, observed)
    if q < 1:
        raise ValueError("q must be >= 1")
    if workers <= 1 or not isinstance(rng, Stream):
        return math.fsum(rnd.increment_samples(observed, v, q, _generator(rng))) / q
    sizes = chunk_sizes(q, workers)

    def part(w: int) -> float:
        if sizes[w] == 0:
            return 0.0
        return math.fsum(rnd.increment_samples(observed, v, sizes[w], rng.spawn("worker", w).rng))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        partial = list(pool.map(part, range(workers)))
    return math.fsum(partial) / q


def oracle2_batch(q: int, instance: Instance, t: int, config: OracleConfig, stream,
                  shortcut: bool = True) -> np.ndarray:
    """Estimates of the expected i-th greedy step increment for i = 1..n from ``q`` rollouts.

    One rollout of the n-step greedy policy yields a sample of every step
    increment, so a single batch serves all i.  Under exact inner oracles the
    greedy run is a deterministic function of the tabular state, which allows
    computing each state's increments once (``shortcut``).
    """
    from .greedy import greedy_state_increments, run_single_round

    stream = as_stream(stream)
    rnd = instance.round(t)
    n = rnd.n
    if q < 1:
        raise ValueError("q must be >= 1")
    totals = np.zeros(n)
    if isinstance(rnd, TabularRound):
        states = rnd.sample_states(q, stream.spawn("states").rng)
        if shortcut and config.exact:
            Y = greedy_state_increments(rnd)
            return np.array([math.fsum(col) for col in Y[states].T]) / q
        sessions = (rnd.session(None, state=h) for h in states)
    else:
        sessions = (rnd.session(stream.spawn("rollout", k).rng) for k in range(q))
    cache = {} if config.exact else None
    cols = [[] for _ in range(n)]
    for k, sess in enumerate(sessions):
        before = sess.value()
        steps = run_single_round(instance, t, n, config, sess, stream.spawn("greedy", k), cache=cache)
        for i, rec in enumerate(steps):
            cols[i].append(rec["value"] - before)
            before = rec["value"]
    for i in range(n):
        totals[i] = math.fsum(cols[i])
    return totals / q


def oracle2(q: int, instance: Instance, t: int, i: int, config: OracleConfig, stream) -> float:
    if not 1 <= i <= instance.n:
        raise ValueError(f"step index {i} outside 1..{instance.n}")
    return float(oracle2_batch(q, instance, t, config, stream)[i - 1])
