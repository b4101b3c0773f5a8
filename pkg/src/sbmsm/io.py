"""JSON reading and writing of instances.

Header fields: ``kind``, ``T``, ``B``, ``items``, ``lambda``, ``capital_lambda``.
Tabular and probing instances carry a ``rounds`` list; influence instances put
the graph (``nodes``, ``edges``, ``p``, ``w``) at top level.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import Instance, InstanceError, TabularRound
from .influence import InfluenceGraph, influence_instance
from .probing import ProbingRound, submodular_from_json

KINDS = ("tabular", "probing", "influence")


def tabular_round_from_json(d: dict, n: int, label: str) -> TabularRound:
    try:
        states = d["states"]
        local = np.array([s["local"] for s in states], dtype=np.int64).reshape(len(states), n)
        prob = np.array([s["prob"] for s in states], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceError(f"{label}: malformed states ({exc})") from None
    H = len(states)
    table = np.zeros((1 << n, H))
    filled = np.zeros((1 << n, H), dtype=bool)
    for key, val in d.get("f", {}).items():
        try:
            m, h = (int(x) for x in key.split("@"))
        except ValueError:
            raise InstanceError(f"{label}: bad objective key {key!r}") from None
        if not (0 <= m < 1 << n and 0 <= h < H):
            raise InstanceError(f"{label}: objective key {key!r} out of range")
        table[m, h] = float(val)
        filled[m, h] = True
    missing = np.argwhere(~filled[1:])
    if missing.size:
        m, h = missing[0]
        raise InstanceError(f"{label}: objective value missing for key '{m + 1}@{h}'")
    return TabularRound(local, prob, table, validate=False)


def tabular_round_to_json(rnd: TabularRound) -> dict:
    states = [{"prob": float(p), "local": row} for p, row in zip(rnd.prob, rnd.local.tolist())]
    f = {f"{m}@{h}": float(rnd.table[m, h]) for m in range(1, 1 << rnd.n) for h in range(rnd.n_states)}
    return {"states": states, "f": f}


def instance_from_dict(d: dict, validate: bool = True) -> Instance:
    kind = d.get("kind")
    if kind not in KINDS:
        raise InstanceError(f"kind must be one of {KINDS}, got {kind!r}")
    try:
        T, B = int(d["T"]), int(d["B"])
        lam, cap = float(d["lambda"]), float(d["capital_lambda"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceError(f"missing or malformed header field: {exc}") from None
    items = tuple(str(x) for x in d.get("items", ()))
    if kind == "influence":
        graph = InfluenceGraph(d["nodes"], d["edges"], d["p"], d["w"])
        inst = influence_instance(graph, B, lam, cap, items or tuple(str(v) for v in range(graph.n)))
        if inst.T != T:
            raise InstanceError(f"graph has {inst.T} rounds of parameters, header says T={T}")
    else:
        rounds_json = d.get("rounds", [])
        n = len(items) if items else None
        rounds = []
        for t, r in enumerate(rounds_json):
            label = f"round {t}"
            if kind == "tabular":
                if n is None:
                    n = len(r["states"][0]["local"])
                rounds.append(tabular_round_from_json(r, n, label))
            else:
                rounds.append(ProbingRound(r["p"], submodular_from_json(r["g"])))
        inst = Instance(T, B, tuple(rounds), lam, cap, kind, items)
    if validate:
        inst.validate()
    return inst


def instance_to_dict(inst: Instance) -> dict:
    out = {"kind": inst.kind, "T": inst.T, "B": inst.B, "items": list(inst.items),
           "lambda": inst.lam, "capital_lambda": inst.capital_lambda}
    if inst.kind == "influence":
        out.update(inst.rounds[0].graph.to_json())
    elif inst.kind == "probing":
        out["rounds"] = [r.to_json() for r in inst.rounds]
    else:
        out["rounds"] = [tabular_round_to_json(r) for r in inst.rounds]
    return out


def load_instance(path, validate: bool = True) -> Instance:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: not valid JSON ({exc})") from None
    return instance_from_dict(d, validate)


def dumps(obj) -> str:
    """Canonical JSON text used for every report, so equal inputs give equal bytes."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def save_instance(inst: Instance, path) -> None:
    Path(path).write_text(dumps(instance_to_dict(inst)))
