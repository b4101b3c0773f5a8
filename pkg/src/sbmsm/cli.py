"""Command-line entry point: ``sbmsm <command> ...``.

Every report is canonical JSON (sorted keys, no timestamps) that echoes the
numeric parameters used, so a fixed seed and worker count give identical bytes.

Exit codes: 0 success, 1 validation or property failure, 2 usage error,
3 size-guard refusal.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import Instance, InstanceError, NotTabularError, SizeGuardError, ZeroProbabilityError
from .exact import execute_exact_policy, solve_dp
from .greedy import budget_gr, epsilon_to_params, greedy_expected_value, greedy_increments, multi_gr
from .harness import (
    CSV_HEADER, brute_force_opt, check_adaptive_submodularity, concentrated_instance, estimate_policy_value,
    feasible_budgets, gap_instance, gap_report, lookahead_trap_instance, best_partial_value,
)
from .influence import influence_to_tabular
from .io import dumps, instance_to_dict, load_instance
from .oracles import OracleConfig
from .probing import probing_to_tabular
from .streams import Stream

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_GUARD = 0, 1, 2, 3

DEFAULT_EPSILON = 0.1
DEFAULT_C = 1.0
DEFAULT_ROLLOUTS = 10_000
DEFAULT_SEED = 42
TOL = 1e-9
PROPERTIES = ("submodularity", "oracle-equivalence", "greedy-steps", "greedy-ratio", "gap-sandwich")
GEN_KINDS = ("concentrated", "lookahead-trap", "gap")


class UsageError(Exception):
    pass


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _as_tabular(instance: Instance) -> Instance:
    """Tabular view of an instance for enumeration-based checks."""
    if instance.kind == "probing":
        return probing_to_tabular(instance)
    if instance.kind == "influence":
        return influence_to_tabular(instance)
    return instance


def _oracle_config(args, instance: Instance) -> tuple[OracleConfig, dict]:
    """Oracle settings from the flags, plus the parameters to echo."""
    echo = {"oracle": args.oracle, "epsilon": args.epsilon, "c": args.c, "workers": args.workers}
    if args.oracle == "exact":
        if instance.kind == "influence":
            raise UsageError("exact oracle mode needs tabular or probing instances")
        echo.update(delta=None, xi=None, q1=None, q2=None)
        return OracleConfig(0.0, 0.0, mode="exact", workers=args.workers), echo
    if (args.delta is None) != (args.xi is None):
        raise UsageError("--delta and --xi must be given together")
    if args.delta is not None:
        delta, xi = args.delta, args.xi
        echo.update(epsilon=None, c=None)
    else:
        delta, xi = epsilon_to_params(args.epsilon, args.c, instance.lam, instance.capital_lambda, max(instance.B, 1))
    cfg = OracleConfig(delta, xi, q=args.q, q2=args.q2, workers=args.workers)
    echo.update(delta=delta, xi=xi, q1=cfg.q1(instance.n, instance.capital_lambda),
                q2=cfg.q2_for(instance.n, instance.T, instance.capital_lambda))
    return cfg, echo


def _greedy_budget(instance: Instance, cfg: OracleConfig, seed: int) -> np.ndarray:
    budget, _ = budget_gr(instance, cfg, Stream(seed).spawn("budget"))
    return budget


# commands

def cmd_validate(args) -> int:
    try:
        inst = load_instance(args.instance, validate=False)
        inst.validate()
    except InstanceError as exc:
        _emit(dumps({"command": "validate", "instance": args.instance, "valid": False, "error": str(exc)}), args.out)
        return EXIT_FAIL
    _emit(dumps({"command": "validate", "instance": args.instance, "valid": True, "kind": inst.kind,
                 "T": inst.T, "B": inst.B, "n": inst.n}), args.out)
    return EXIT_OK


def cmd_exact(args) -> int:
    inst = load_instance(args.instance)
    if inst.kind == "influence":
        inst = influence_to_tabular(inst)
    policy = solve_dp(inst)
    report = {"command": "exact", "instance": args.instance, "T": inst.T, "B": inst.B,
              "value": policy.value, "R": policy.R.tolist()}
    if args.policy_out:
        Path(args.policy_out).write_text(dumps(policy.to_json()))
        report["policy"] = args.policy_out
    else:
        report["policy"] = policy.to_json()
    _emit(dumps(report), args.out)
    return EXIT_OK


def _runner(kind: str, inst: Instance, cfg: OracleConfig, budget, policy=None):
    if kind == "exact":
        return lambda i, s: execute_exact_policy(policy, i, s.rng)[1]
    return lambda i, s: multi_gr(i, cfg, s, budget=budget)[1]


def cmd_greedy(args) -> int:
    inst = load_instance(args.instance)
    cfg, echo = _oracle_config(args, inst)
    budget = _greedy_budget(inst, cfg, args.seed)
    est = estimate_policy_value(_runner("greedy", inst, cfg, budget), inst, args.rollouts, args.seed,
                                args.confidence, args.workers)
    trace, value = multi_gr(inst, cfg, Stream(args.seed).spawn("trace"), budget=budget)
    report = {"command": "greedy", "instance": args.instance, "seed": args.seed, "rollouts": args.rollouts,
              **echo, "budget": [int(x) for x in budget], "estimate": est.to_json(),
              "trace": {"selected": trace.selected, "value": value,
                        "steps": [{k: r[k] for k in ("t", "step", "item", "estimate", "observation")}
                                  for r in trace.records]}}
    _emit(dumps(report), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    inst = load_instance(args.instance)
    if args.policy == "exact":
        cfg, echo = None, {"oracle": None, "workers": args.workers}
    else:
        cfg, echo = _oracle_config(args, inst)
    report = {"command": "eval", "instance": args.instance, "seed": args.seed, "rollouts": args.rollouts,
              "policy": args.policy, **echo}
    policy = None
    if args.policy == "exact":
        policy = solve_dp(_as_tabular(inst) if inst.kind == "influence" else inst)
        if inst.kind == "influence":
            inst = _as_tabular(inst)
        budget = None
        report["optimum"] = policy.value
    else:
        if args.policy == "uniform":
            budget = np.full(inst.T, inst.B // inst.T) + (np.arange(inst.T) < inst.B % inst.T)
            budget = np.minimum(budget, inst.n)
        else:
            budget = _greedy_budget(inst, cfg, args.seed)
        report["budget"] = [int(x) for x in budget]
        if cfg.exact and inst.kind == "tabular":
            report["expected_value"] = greedy_expected_value(inst, budget)
    est = estimate_policy_value(_runner(args.policy, inst, cfg, budget, policy), inst, args.rollouts, args.seed,
                                args.confidence, args.workers)
    report["estimate"] = est.to_json()
    _emit(dumps(report), args.out)
    return EXIT_OK


def cmd_gap(args) -> int:
    reports = [gap_report(T, args.rollouts, args.seed) for T in args.T]
    if args.csv:
        _emit(CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in reports), args.out)
    else:
        _emit(dumps({"command": "gap", "seed": args.seed, "rollouts": args.rollouts,
                     "reports": [r.to_json() for r in reports]}), args.out)
    return EXIT_OK


def _check(prop: str, inst: Instance) -> dict:
    """Run one property check; returns a report with ``passed`` and an optional witness."""
    tab = _as_tabular(inst)
    if prop == "submodularity":
        res = check_adaptive_submodularity(tab)
        return {"passed": res.passed, "checked": res.checked, "witness": res.witness}
    if prop == "oracle-equivalence":
        solver, brute = solve_dp(tab).value, brute_force_opt(tab)
        ok = abs(solver - brute) <= TOL
        return {"passed": ok, "solver": solver, "brute_force": brute,
                "witness": None if ok else {"difference": solver - brute}}
    if prop == "greedy-steps":
        inc = [greedy_increments(r) for r in tab.rounds]
        for t, row in enumerate(inc):
            bad = np.nonzero(np.diff(row) > TOL)[0]
            if len(bad):
                i = int(bad[0])
                return {"passed": False, "witness": {"t": t, "step": i + 2, "previous": float(row[i]),
                                                     "increment": float(row[i + 1])}}
        budget = _greedy_budget(tab, OracleConfig(0.0, 0.0, mode="exact"), 0)
        score = lambda v: math.fsum(math.fsum(inc[t][: v[t]]) for t in range(tab.T))
        got = score(budget)
        best_vec = max(feasible_budgets(tab.T, tab.n, tab.B), key=score)
        ok = got >= score(best_vec) - TOL
        return {"passed": ok, "budget": budget.tolist(), "score": got, "best_score": score(best_vec),
                "witness": None if ok else {"best_budget": best_vec.tolist()}}
    if prop == "greedy-ratio":
        if not check_adaptive_submodularity(tab).passed:
            return {"passed": False, "witness": {"reason": "instance is not adaptive submodular"}}
        opt = solve_dp(tab).value
        budget = _greedy_budget(tab, OracleConfig(0.0, 0.0, mode="exact"), 0)
        val = greedy_expected_value(tab, budget)
        bound = 0.5 * (1 - 1 / math.e) * opt
        ok = val >= bound - TOL
        return {"passed": ok, "greedy": val, "optimum": opt, "bound": bound, "budget": budget.tolist(),
                "witness": None if ok else {"shortfall": bound - val}}
    if prop == "gap-sandwich":
        opt = solve_dp(tab).value
        best, vec = best_partial_value(tab)
        ok = opt <= 2 * best + TOL
        return {"passed": ok, "optimum": opt, "best_partial": best, "budget": vec.tolist(),
                "witness": None if ok else {"excess": opt - 2 * best}}
    raise UsageError(f"unknown property {prop!r}")


def cmd_check(args) -> int:
    inst = load_instance(args.instance)
    res = _check(args.property, inst)
    _emit(dumps({"command": "check", "instance": args.instance, "property": args.property, **res}), args.out)
    return EXIT_OK if res["passed"] else EXIT_FAIL


def cmd_gen(args) -> int:
    if args.kind == "concentrated":
        t_star = None if args.t_star is None else args.t_star
        inst = concentrated_instance(args.T, t_star)
    elif args.kind == "lookahead-trap":
        inst = lookahead_trap_instance(args.n)
    else:
        inst = gap_instance(args.T)
    _emit(dumps(instance_to_dict(inst)), args.out)
    return EXIT_OK


# argument parsing

def _add_oracle_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--oracle", choices=("monte_carlo", "exact"), default="monte_carlo")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="target additive loss (default 0.1)")
    p.add_argument("--c", type=float, default=DEFAULT_C, help="scaling constant in (0, 1] (default 1)")
    p.add_argument("--delta", type=float, help="explicit oracle accuracy, overrides epsilon")
    p.add_argument("--xi", type=float, help="explicit oracle failure probability, overrides epsilon")
    p.add_argument("--q", type=int, help="samples per item estimate (overrides the bound)")
    p.add_argument("--q2", type=int, help="greedy rollouts per round for the budget (overrides the bound)")
    p.add_argument("--rollouts", type=int, default=DEFAULT_ROLLOUTS)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--confidence", choices=("hoeffding", "normal"), default="hoeffding")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbmsm", description="Multi-round budgeted adaptive selection tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("instance")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("exact", help="solve for the optimal adaptive policy")
    p.add_argument("instance")
    p.add_argument("--policy-out", help="write the policy to this file instead of inlining it")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("greedy", help="run the greedy partially adaptive policy")
    p.add_argument("instance")
    _add_oracle_flags(p)
    p.set_defaults(func=cmd_greedy)

    p = sub.add_parser("eval", help="estimate a policy's value by rollouts")
    p.add_argument("instance")
    p.add_argument("--policy", choices=("greedy", "uniform", "exact"), default="greedy")
    _add_oracle_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gap", help="adaptivity gap family report")
    p.add_argument("--T", type=int, nargs="+", required=True, help="perfect squares >= 4")
    p.add_argument("--rollouts", type=int, default=DEFAULT_ROLLOUTS)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("check", help="verify a structural property")
    p.add_argument("instance")
    p.add_argument("--property", choices=PROPERTIES, required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("gen", help="write a constructive instance")
    p.add_argument("kind", choices=GEN_KINDS)
    p.add_argument("--T", type=int, default=4)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--t-star", type=int)
    p.set_defaults(func=cmd_gen)

    for sp in sub.choices.values():
        sp.add_argument("--out", help="write the report here instead of stdout")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SizeGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (UsageError, NotTabularError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InstanceError, ZeroProbabilityError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
