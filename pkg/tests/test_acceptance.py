"""Acceptance suite: each criterion prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python3 tests/test_acceptance.py``.
"""
import math
import sys
import time
from functools import lru_cache

import numpy as np
import pytest

from sbmsm.cli import main as cli_main
from sbmsm.exact import leaf_bound, solve_dp, tree_stats
from sbmsm.generators import random_instance_set, random_tabular_instance, random_tabular_round
from sbmsm.greedy import budget_gr, greedy_expected_value, greedy_increments
from sbmsm.harness import (
    best_partial_value, brute_force_opt, check_adaptive_submodularity, concentrated_instance,
    cross_round_restricted_greedy, feasible_budgets, gap_report, interpolated_objective, lookahead_trap_instance,
    round_fractional_budget,
)
from sbmsm.io import save_instance
from sbmsm.oracles import OracleConfig, oracle1, oracle2_batch, q_oracle1, q_oracle2
from sbmsm.probing import Additive, make_probing_instance
from sbmsm.streams import Stream

TOL = 1e-9
EXACT = OracleConfig(0.0, 0.0, mode="exact")
RATIO = 0.5 * (1 - 1 / math.e)


@lru_cache(maxsize=None)
def instance_set():
    return tuple(random_instance_set(2024, 120, max_n=3, max_T=3, max_H=4, max_B=3))


@lru_cache(maxsize=None)
def submodular_set():
    return tuple(inst for inst in instance_set() if check_adaptive_submodularity(inst).passed)


def solver_vs_brute():
    start = time.perf_counter()
    worst = 0.0
    for inst in instance_set():
        worst = max(worst, abs(solve_dp(inst).value - brute_force_opt(inst)))
    secs = time.perf_counter() - start
    ok = len(instance_set()) >= 100 and worst <= TOL and secs < 300
    return ok, f"{len(instance_set())} instances, max |R - brute| = {worst:.2e}, {secs:.1f}s"


def greedy_ratio():
    worst, low = math.inf, math.inf
    for inst in submodular_set():
        opt = solve_dp(inst).value
        b, _ = budget_gr(inst, EXACT, Stream(0))
        val = greedy_expected_value(inst, b)
        worst = min(worst, val - RATIO * opt)
        low = min(low, val / opt) if opt > 0 else low
    ok = len(submodular_set()) > 0 and worst >= -TOL
    return ok, (f"{len(submodular_set())} adaptive submodular instances, min(greedy - {RATIO:.4f} OPT) = {worst:.3g}, "
                f"lowest greedy/OPT = {low:.4f}")


def uniform_allocation_failure():
    rows = []
    ok = True
    for T in (2, 5, 10):
        inst = concentrated_instance(T)
        opt = solve_dp(inst).value
        uni = greedy_expected_value(inst, [1] * T)
        ok &= opt == T and uni == 1.0 and uni / opt == 1 / T
        rows.append(f"T={T}: OPT={opt:g} uniform={uni:g}")
    return ok, "; ".join(rows)


def cross_round_failure():
    rows = []
    ok = True
    for n in (4, 10, 50):
        inst = lookahead_trap_instance(n)
        opt = solve_dp(inst).value
        got = cross_round_restricted_greedy(inst)
        ok &= opt == n / 2 + 1.5 and got == 2.0
        rows.append(f"n={n}: OPT={opt:g} restricted={got:g}")
    return ok, "; ".join(rows)


def gap_trend():
    start = time.perf_counter()
    reps = {T: gap_report(T, 100_000, seed=42) for T in (4, 16, 64, 100)}
    secs = time.perf_counter() - start
    closed_ok = abs(reps[4].sigma_partial_closed_form - 3.0) <= TOL and \
        abs(reps[100].sigma_partial_closed_form - 65.132) <= 1e-3
    r100 = reps[100].ratio
    Ts = sorted(reps)
    mono = all(reps[b].ratio >= reps[a].ratio - 2 * math.hypot(reps[a].ratio_std_error, reps[b].ratio_std_error)
               for a, b in zip(Ts, Ts[1:]))
    limit_ok = all(abs(r.limit - 1.5820) < 1e-4 for r in reps.values())
    ok = closed_ok and 1.40 <= r100 <= 2.0 and mono and limit_ok and secs < 120
    ratios = ", ".join(f"{T}:{reps[T].ratio:.4f}" for T in Ts)
    return ok, f"ratios {ratios}; limit {reps[100].limit:.4f}; {secs:.1f}s"


def partial_sandwich():
    worst, low = math.inf, math.inf
    for inst in instance_set():
        best, _ = best_partial_value(inst)
        opt = solve_dp(inst).value
        worst = min(worst, 2 * best - opt)
        low = min(low, best / opt) if opt > 0 else low
    return worst >= -TOL, (f"{len(instance_set())} instances, min(2 best_partial - OPT) = {worst:.3g}, "
                           f"lowest best_partial/OPT = {low:.4f}")


def concentration_instance():
    return random_tabular_instance(np.random.default_rng(77), T=2, n=3, H=4, B=3, family="generic")


def concentration():
    delta = xi = 0.05
    inst = concentration_instance()
    cap, n, T = inst.capital_lambda, inst.n, inst.T
    q1 = q_oracle1(delta, xi, n, cap)
    q2 = q_oracle2(delta, xi, n, T, cap)
    rnd = inst.rounds[0]
    # condition on one observed item so the estimate is a genuinely conditional one
    h = int(np.argmax(rnd.prob))
    obs = rnd.project(h, [0])
    cands = [v for v in range(n) if v not in obs]
    true = {v: inst.exact_marginal(0, v, obs) for v in cands}
    incs = [greedy_increments(r) for r in inst.rounds]
    root = Stream(2025)
    ok1 = ok2 = 0
    trials = 200
    for k in range(trials):
        s = root.spawn("trial", k)
        est = {v: oracle1(q1, inst, 0, obs, v, s.spawn("item", v)) for v in cands}
        pick = max(cands, key=lambda v: (est[v], -v))
        ok1 += true[pick] >= max(true.values()) - delta
        good = all(np.all(np.abs(oracle2_batch(q2, inst, t, EXACT, s.spawn("round", t)) - incs[t]) <= delta)
                   for t in range(T))
        ok2 += good
    fails = max(trials - ok1, trials - ok2)
    return fails <= 18, f"q={q1} q'={q2}; item choice ok {ok1}/{trials}, step estimates ok {ok2}/{trials}"


def greedy_step_properties():
    insts = list(submodular_set())
    rng = np.random.default_rng(99)
    while len(insts) < len(submodular_set()) + 30:
        cand = random_tabular_instance(rng, T=int(rng.integers(1, 4)), n=int(rng.integers(1, 4)), H=4, B=0)
        if cand.n * cand.T < 2:
            continue
        cand.B = int(rng.integers(1, min(4, cand.n * cand.T - 1) + 1))
        cand.validate()
        if check_adaptive_submodularity(cand).passed:
            insts.append(cand)
    mono_bad = alloc_bad = 0
    for inst in insts:
        inc = [greedy_increments(r) for r in inst.rounds]
        mono_bad += any(np.any(np.diff(row) > TOL) for row in inc)
        score = lambda v: math.fsum(math.fsum(inc[t][: v[t]]) for t in range(inst.T))
        b, _ = budget_gr(inst, EXACT, Stream(0))
        best = max(score(v) for v in feasible_budgets(inst.T, inst.n, inst.B))
        alloc_bad += score(b) < best - TOL
    ok = mono_bad == 0 and alloc_bad == 0
    return ok, f"{len(insts)} instances, increasing steps {mono_bad}, allocation misses {alloc_bad}"


def tree_bounds():
    rng = np.random.default_rng(7)
    checked = leaf_bad = total_bad = 0
    worst_nature = 0.0
    for _ in range(60):
        n = int(rng.integers(1, 5))
        rnd = random_tabular_round(rng, n, 8)
        H = int(np.count_nonzero(rnd.prob > 0))
        st = tree_stats(rnd, n)
        checked += 1
        leaf_bad += st["leaves"] > leaf_bound(n, H)
        total_bad += st["policy_nodes"] + st["leaves"] > 2 * st["leaves"]
        worst_nature = max(worst_nature, (st["policy_nodes"] + st["nature_nodes"] + st["leaves"]) / st["leaves"])
    ok = leaf_bad == 0 and total_bad == 0
    return ok, (f"{checked} rounds, leaf bound violations {leaf_bad}, (decision + leaf) > 2 leaves {total_bad}; "
                f"with chance nodes the ratio reaches {worst_nature:.2f}")


def rounding():
    rng = np.random.default_rng(31)
    worst_iter_excess = 0
    worst_drop = 0.0
    for _ in range(100):
        T, n = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        B = int(rng.integers(0, n * T + 1))
        d = np.full(T, B / T)
        for _ in range(20):
            i, j = rng.integers(T, size=2)
            move = rng.random() * min(d[i], n - d[j])
            d[i] -= move
            d[j] += move
        opt = [np.concatenate([[0.0], np.cumsum(np.sort(rng.random(n))[::-1])]) for _ in range(T)]
        b, iters = round_fractional_budget(d, opt)
        worst_iter_excess = max(worst_iter_excess, iters - T)
        worst_drop = max(worst_drop, interpolated_objective(d, opt) - interpolated_objective(b, opt))
    ok = worst_iter_excess <= 0 and worst_drop <= TOL
    return ok, f"100 vectors, max(iterations - T) = {worst_iter_excess}, max objective drop = {worst_drop:.2e}"


def reproducibility(tmp_dir):
    conc = f"{tmp_dir}/conc.json"
    probe = f"{tmp_dir}/probe.json"
    save_instance(concentrated_instance(4), conc)
    save_instance(make_probing_instance(2, 3, [0.5, 0.8, 0.3], Additive([1.0, 0.5, 2.0]), 0.5, 2.0), probe)
    commands = [
        ["validate", probe],
        ["exact", probe],
        ["greedy", probe, "--rollouts", "200", "--q", "50", "--q2", "50"],
        ["greedy", probe, "--rollouts", "200", "--q", "50", "--q2", "50", "--workers", "3"],
        ["greedy", conc, "--oracle", "exact", "--rollouts", "100"],
        ["eval", probe, "--policy", "exact", "--rollouts", "500"],
        ["eval", probe, "--policy", "uniform", "--rollouts", "200", "--q", "40", "--q2", "40", "--workers", "2"],
        ["gap", "--T", "4", "16", "--rollouts", "20000"],
        ["gap", "--T", "4", "--rollouts", "1000", "--csv"],
        ["check", probe, "--property", "gap-sandwich"],
        ["gen", "gap", "--T", "9"],
    ]
    mismatched = []
    for k, cmd in enumerate(commands):
        outs = []
        for rep in range(2):
            path = f"{tmp_dir}/out_{k}_{rep}"
            cli_main(cmd + ["--out", path])
            with open(path, "rb") as fh:
                outs.append(fh.read())
        if outs[0] != outs[1] or not outs[0]:
            mismatched.append(" ".join(cmd[:1]))
    return not mismatched, f"{len(commands)} commands run twice, mismatches: {mismatched or 'none'}"


CRITERIA = [
    ("1 solver matches brute force", solver_vs_brute),
    ("2 greedy approximation ratio", greedy_ratio),
    ("3 uniform allocation failure", uniform_allocation_failure),
    ("4 cross-round greedy failure", cross_round_failure),
    ("5 adaptivity gap trend", gap_trend),
    ("6 partial adaptivity sandwich", partial_sandwich),
    ("7 oracle concentration", concentration),
    ("8 greedy step properties", greedy_step_properties),
    ("9 game tree size bounds", tree_bounds),
    ("10 fractional budget rounding", rounding),
    ("11 byte-identical reports", reproducibility),
]


def _line(name, ok, detail):
    return f"criterion {name}: {'PASS' if ok else 'FAIL'} ({detail})"


@pytest.mark.parametrize("name,fn", CRITERIA, ids=[c[0].split()[0] for c in CRITERIA])
def test_criterion(name, fn, capsys, tmp_path):
    ok, detail = fn(tmp_path) if fn is reproducibility else fn()
    with capsys.disabled():
        print("\n" + _line(name, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    import tempfile
    failed = 0
    for name, fn in CRITERIA:
        if fn is reproducibility:
            with tempfile.TemporaryDirectory() as d:
                ok, detail = fn(d)
        else:
            ok, detail = fn()
        failed += not ok
        print(_line(name, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
