"""Seeded instance generators: random catalogs and spot-instance scheduling."""
from __future__ import annotations

import numpy as np

from .model import spot_reduce

GEN_LIMITS = {"n_base": 6, "budget": 12, "reward_bound": 4}


def _check_limits(n_base, budget, reward_bound):
    if not 1 <= n_base <= GEN_LIMITS["n_base"]:
        raise ValueError(f"n_base must lie in [1, {GEN_LIMITS['n_base']}], got {n_base}")
    if not 1 <= budget <= GEN_LIMITS["budget"]:
        raise ValueError(f"budget must lie in [1, {GEN_LIMITS['budget']}], got {budget}")
    if not 1 <= reward_bound <= GEN_LIMITS["reward_bound"]:
        raise ValueError(f"reward_bound must lie in [1, {GEN_LIMITS['reward_bound']}], got {reward_bound}")


def _probs(rng, k):
    raw = rng.dirichlet(np.ones(k))
    p = [round(float(v), 4) for v in raw[:-1]]
    p = [max(v, 1e-4) for v in p]
    last = 1.0 - sum(p)
    if last <= 0:
        p = [1.0 / k] * (k - 1)
        last = 1.0 - sum(p)
    return p + [last]


def _concave_breakpoints(rng, top):
    """Random non-decreasing concave piecewise-linear g with g(0) = 0."""
    pieces = int(rng.integers(1, 4))
    slopes = sorted((round(float(s), 3) for s in rng.uniform(0.1, 1.0, pieces)), reverse=True)
    lengths = [round(float(v), 3) for v in rng.uniform(0.5, max(top, 1.0) / pieces + 0.5, pieces)]
    x, y, pts = 0.0, 0.0, [[0.0, 0.0]]
    for s, length in zip(slopes, lengths):
        x, y = round(x + length, 6), round(y + s * length, 6)
        pts.append([x, y])
    return pts


def random_objective(rng, ids, reward_bound, family="concave_of_sum"):
    weights = {i: round(float(rng.uniform(0.5, 2.0)), 3) for i in ids}
    if family == "additive":
        return {"family": "additive", "params": {"weights": weights}}
    if family == "concave_of_sum":
        top = sum(weights.values()) * reward_bound * 0.6
        return {"family": "concave_of_sum", "params": {"weights": weights, "breakpoints": _concave_breakpoints(rng, top)}}
    if family == "nested_coverage":
        elements = [f"e{k}" for k in range(max(2, 2 * len(ids)))]
        ew = {e: round(float(rng.uniform(0.5, 2.0)), 3) for e in elements}
        chains = {}
        for i in ids:
            chain = {}
            for level in range(1, reward_bound + 1):
                m = int(rng.integers(0, 3))
                chain[str(level)] = sorted(rng.choice(elements, size=m, replace=False).tolist())
            chains[i] = chain
        return {"family": "nested_coverage", "params": {"element_weights": ew, "chains": chains}}
    raise ValueError(f"unknown objective family {family!r}")


def random_catalog(n_base, budget, reward_bound, seed, objective="concave_of_sum", max_support=3):
    """Base-item file dict (``expanded: false``) for a random catalog."""
    _check_limits(n_base, budget, reward_bound)
    rng = np.random.default_rng(seed)
    ids = [f"item{k}" for k in range(n_base)]
    items = []
    for i in ids:
        k = int(rng.integers(1, min(max_support, budget) + 1))
        sizes = sorted(rng.choice(np.arange(1, budget + 1), size=k, replace=False).tolist())
        probs = _probs(rng, k)
        rewards = sorted(rng.integers(0, reward_bound + 1, size=k).tolist())
        if rewards[-1] == 0:
            rewards[-1] = int(rng.integers(1, reward_bound + 1))
        items.append({
            "id": i,
            "sizes": {str(s): p for s, p in zip(sizes, probs)},
            "rewards": {str(s): int(r) for s, r in zip(sizes, rewards)},
        })
    return {
        "name": f"random-n{n_base}-B{budget}-M{reward_bound}-s{seed}",
        "budget": budget,
        "reward_bound": reward_bound,
        "objective": random_objective(rng, ids, reward_bound, objective),
        "expanded": False,
        "base_items": items,
    }


def random_instance(n_base, budget, reward_bound, seed, objective="concave_of_sum", max_support=3):
    from .io import instance_from_dict

    return instance_from_dict(random_catalog(n_base, budget, reward_bound, seed, objective, max_support))


def spot_catalog(n_jobs, n_instances, budget, reward_bound, seed):
    """Jobs' progress curves and spot instances' interruption distributions."""
    _check_limits(n_jobs * n_instances, budget, reward_bound)
    rng = np.random.default_rng(seed)
    instances = {}
    for k in range(n_instances):
        m = int(rng.integers(1, 4))
        costs = sorted(rng.choice(np.arange(1, budget + 3), size=m, replace=False).tolist())
        instances[f"spot{k}"] = dict(zip(costs, _probs(rng, m)))
    jobs = {}
    for j in range(n_jobs):
        curves = {}
        for k in range(n_instances):
            setup = int(rng.integers(1, 3))
            epoch = int(rng.integers(1, 3))
            curves[f"spot{k}"] = {s: min(reward_bound, max(0, (s - setup) // epoch)) for s in range(1, budget + 3)}
        jobs[f"job{j}"] = curves
    return jobs, instances


def spot_instance(n_jobs, n_instances, budget, reward_bound, seed, objective="concave_of_sum"):
    jobs, instances = spot_catalog(n_jobs, n_instances, budget, reward_bound, seed)
    rng = np.random.default_rng([seed, 1])
    spec = random_objective(rng, list(jobs), reward_bound, objective)
    return spot_reduce(jobs, instances, budget, reward_bound, spec,
                       name=f"spot-j{n_jobs}-i{n_instances}-B{budget}-s{seed}")
