"""JSON instance/solution files and CSV reports."""
from __future__ import annotations

import csv
import json
from typing import Iterable

import numpy as np

from .model import (
    BaseItem,
    ExpandedItem,
    Instance,
    InstanceError,
    PartitionMatroid,
    RewardCurve,
    SizeDistribution,
    expand_with_caps,
)
from .objective import build_objective
from .polytope import FractionalSolution


def _prob(v) -> float:
    # decimal strings are accepted to avoid binary drift in hand-written files
    return float(str(v)) if isinstance(v, str) else float(v)


def _sizes(d) -> dict[int, float]:
    return {int(s): _prob(p) for s, p in d.items()}


def _rewards(d) -> dict[int, int]:
    out = {}
    for s, r in d.items():
        if float(r) != int(float(r)):
            raise InstanceError(f"reward {r!r} at size {s} is not an integer")
        out[int(s)] = int(float(r))
    return out


def instance_from_dict(d: dict) -> Instance:
    try:
        budget, bound = int(d["budget"]), int(d["reward_bound"])
        objective = d.get("objective") or {"family": "additive", "params": {}}
        name = d.get("name", "instance")
        if not d.get("expanded", False):
            base = [BaseItem.from_dicts(it["id"], _sizes(it["sizes"]), _rewards(it["rewards"])) for it in d["base_items"]]
            return expand_with_caps(base, budget, bound, objective, name)
        items = [
            ExpandedItem(
                id=str(it["id"]),
                base_id=str(it.get("base_id", it["id"])),
                cap=int(it["cap"]),
                sizes=SizeDistribution(_sizes(it["sizes"])),
                rewards=RewardCurve(_rewards(it["rewards"])),
                partition_id=str(it["partition"]),
            )
            for it in d["items"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InstanceError):
            raise
        raise InstanceError(f"malformed instance: {exc!r}") from exc
    items = tuple(sorted(items, key=lambda it: it.id))
    spec = {"family": objective["family"], "params": dict(objective.get("params", {}))}
    return Instance(
        items=items,
        matroid=PartitionMatroid(d["partitions"]) if "partitions" in d else PartitionMatroid.from_items(items),
        budget=budget,
        reward_bound=bound,
        objective=build_objective(spec, [it.base_id for it in items]),
        objective_spec=spec,
        name=name,
    )


def instance_to_dict(instance: Instance) -> dict:
    """Expanded-form dict; requires the instance to carry a serializable objective spec."""
    if instance.objective_spec is None:
        raise InstanceError("instance objective has no serializable spec")
    return {
        "name": instance.name,
        "budget": instance.budget,
        "reward_bound": instance.reward_bound,
        "objective": instance.objective_spec,
        "expanded": True,
        "items": [
            {
                "id": it.id,
                "base_id": it.base_id,
                "cap": it.cap,
                "partition": it.partition_id,
                "sizes": {str(s): p for s, p in it.sizes.probs.items()},
                "rewards": {str(s): r for s, r in it.rewards.values.items()},
            }
            for it in instance.items
        ],
        "partitions": {k: sorted(v) for k, v in instance.matroid.partitions.items()},
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def read_instance(path) -> Instance:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"{path}: not valid JSON ({exc})") from exc
    return instance_from_dict(data)


def write_instance(instance: Instance, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(instance_to_dict(instance)))


def solution_to_dict(solution: FractionalSolution, include_mid: bool = False) -> dict:
    inst = solution.instance
    xs = solution.x_start
    meta = solution.meta
    out = {
        "instance": inst.name,
        "b": meta.get("stopping_time"),
        "delta": meta.get("step"),
        "seed": meta.get("seed"),
        "iterations": meta.get("iterations"),
        "xbar": {it.id: float(v) for it, v in zip(inst.items, solution.xbar)},
        "x_start": {
            it.id: {str(t + 1): float(xs[i, t]) for t in range(inst.budget) if xs[i, t] != 0.0}
            for i, it in enumerate(inst.items)
        },
    }
    if include_mid:
        out["values"] = solution.values.tolist()
    return out


def solution_from_dict(d: dict, system) -> FractionalSolution:
    """Rebuild a solution; without stored ``values`` the transient states are re-derived from start pulls."""
    inst = system.instance
    meta = {"stopping_time": d.get("b"), "step": d.get("delta"), "seed": d.get("seed"), "iterations": d.get("iterations")}
    if "values" in d:
        values = np.asarray(d["values"], dtype=float)
        if values.shape != (system.n_vars,):
            raise InstanceError("solution values do not match the instance's constraint system")
        return FractionalSolution(system, values, meta=meta)
    xs = np.zeros((inst.n_items, inst.budget))
    for item_id, slots in d["x_start"].items():
        if item_id not in inst.index:
            raise InstanceError(f"solution names unknown item {item_id!r}")
        for t, v in slots.items():
            xs[inst.index[item_id], int(t) - 1] = float(v)
    sol = FractionalSolution.from_start_pulls(system, xs)
    sol.meta.update(meta)
    return sol


def read_solution(path, system) -> FractionalSolution:
    with open(path) as fh:
        return solution_from_dict(json.load(fh), system)


def write_csv(rows: Iterable[dict], fieldnames, fh) -> None:
    """RFC-4180 CSV with a header row."""
    w = csv.DictWriter(fh, fieldnames=list(fieldnames), lineterminator="\r\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
