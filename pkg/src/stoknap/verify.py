"""Ground-truth oracles and Monte-Carlo property suites."""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .cgreedy import GreedyConfig, continuous_greedy
from .objective import DEFAULT_GUARD, EnumerationGuardError, multilinear_estimate, multilinear_exact
from .polytope import build_constraints
from .rounding import REAL, batch_violations, candidate_pairs, simulate_batches

APPROX_RATIO = (1.0 - 1.0 / math.sqrt(math.e)) / 2.0
DP_GUARD = 10**7
Z = 3.0


class GuardExceeded(RuntimeError):
    pass


# -- exact optimum ------------------------------------------------------------

def optimal_adaptive_dp(instance, guard: int = DP_GUARD):
    """Exact optimal adaptive policy value by recursion over (partition outcomes, elapsed slots).

    A state records, per partition, either nothing or the (item, reward) that
    was committed there. An action starts an unused partition's item whose cap
    fits the remaining slots, or stops. Returns ``(value, policy)`` where
    ``policy`` maps reached states to the best action (``None`` = stop).
    """
    B = instance.budget
    K = len(instance.partition_ids)
    members = [[] for _ in range(K)]
    for i, k in enumerate(instance.partition_of):
        members[k].append(i)
    size_space = 1
    for k in range(K):
        size_space *= 1 + sum(len(instance.reward_tables[i][0]) for i in members[k])
    if size_space * (B + 1) > guard:
        raise GuardExceeded(f"DP state space {size_space * (B + 1)} exceeds guard {guard}")

    outcomes = []
    for item in instance.items:
        outcomes.append([(p, s, item.rewards(s)) for s, p in item.sizes.probs.items() if p > 0])
    f = instance.objective
    policy = {}

    @lru_cache(maxsize=None)
    def f_of(state):
        r = np.zeros(instance.n_items, dtype=np.int64)
        for slot in state:
            if slot is not None:
                r[slot[0]] = slot[1]
        return f.evaluate(r)

    @lru_cache(maxsize=None)
    def value(state, t):
        best, action = f_of(state), None
        remaining = B - t
        for k in range(K):
            if state[k] is not None:
                continue
            for i in members[k]:
                if instance.items[i].cap > remaining:
                    continue
                ev = 0.0
                for p, s, r in outcomes[i]:
                    nxt = state[:k] + ((i, r),) + state[k + 1 :]
                    ev += p * value(nxt, t + s)
                if ev > best + 1e-12:
                    best, action = ev, instance.items[i].id
        policy[(state, t)] = action
        return best

    opt = value((None,) * K, 0)
    return opt, policy


def enumerate_deterministic_opt(instance) -> float:
    """Best value over all feasible ordered selections; sizes must be deterministic.

    Independent of the DP: walks every ordered tuple of items, keeps those that
    respect the matroid and start-fit, and evaluates the objective directly.
    """
    size = []
    for item in instance.items:
        sup = item.sizes.support
        if len(sup) != 1:
            raise ValueError(f"item {item.id} has random size")
        size.append(sup[0])
    B = instance.budget
    best = instance.objective.evaluate(np.zeros(instance.n_items, dtype=np.int64))
    part = instance.partition_of
    n = instance.n_items
    for m in range(1, len(instance.partition_ids) + 1):
        for seq in itertools.permutations(range(n), m):
            if len({part[i] for i in seq}) < m:
                continue
            t, ok = 0, True
            r = np.zeros(n, dtype=np.int64)
            for i in seq:
                if instance.items[i].cap > B - t:
                    ok = False
                    break
                r[i] = instance.items[i].rewards(size[i])
                t += size[i]
            if ok:
                best = max(best, instance.objective.evaluate(r))
    return best


# -- Monte-Carlo estimates ----------------------------------------------------

def _merge_violations(stats, instance, batch):
    if stats is None:
        return
    for k, v in batch_violations(instance, batch).items():
        stats[k] = stats.get(k, 0) + v
    stats["runs"] = stats.get("runs", 0) + batch.runs


def simulate_favg(instance, solution, runs: int, seed=None, stats: dict | None = None, threads: int = 1):
    """Mean objective of the rounding policy over ``runs`` runs: (mean, stderr).

    Feasibility violation counts are accumulated into ``stats`` when given.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    total = 0.0
    total_sq = 0.0
    for batch in simulate_batches(instance, solution, runs, seed, threads=threads):
        _merge_violations(stats, instance, batch)
        total += float(batch.values.sum())
        total_sq += float((batch.values**2).sum())
    mean = total / runs
    if runs < 2:
        return mean, 0.0
    var = max(total_sq - runs * mean * mean, 0.0) / (runs - 1)
    return mean, math.sqrt(var / runs)


def wilson_interval(successes: int, trials: int, z: float = Z) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    phat = successes / trials
    denom = 1 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def crs_drop_rate(instance, solution, runs: int, seed=None, min_x: float = 0.01, min_events: int = 300,
                  stats: dict | None = None, threads: int = 1) -> list[dict]:
    """Pr[phantom | (i, t) proposed] for every pair with start mass >= ``min_x``."""
    items, ts, probs = candidate_pairs(solution)
    tracked = np.flatnonzero(probs >= min_x)
    sampled = np.zeros(len(probs), dtype=np.int64)
    dropped = np.zeros(len(probs), dtype=np.int64)
    for batch in simulate_batches(instance, solution, runs, seed, evaluate=False, threads=threads):
        _merge_violations(stats, instance, batch)
        sampled += batch.sampled.sum(axis=0)
        dropped += batch.phantom.sum(axis=0)
    out = []
    for c in tracked:
        n, d = int(sampled[c]), int(dropped[c])
        rate = d / n if n else 0.0
        lo, hi = wilson_interval(d, n)
        out.append({
            "item": instance.items[items[c]].id, "t": int(ts[c]), "x": float(probs[c]),
            "sampled": n, "dropped": d, "rate": rate,
            "stderr": math.sqrt(rate * (1 - rate) / n) if n else float("nan"),
            "wilson_lo": lo, "wilson_hi": hi, "low_power": n < min_events,
        })
    return out


def blocker_bounds(solution, i: int, t: int) -> np.ndarray:
    """Per-blocker upper bound on Pr[item j can block proposal (i, t)].

    Same partition as ``i``: mass of j started before ``t`` (its transient plus
    completed mass at ``t``) plus half its start mass at ``t`` (tie lost).
    Other partition: mass of j started before ``t`` and still running at ``t``,
    plus half its start mass at ``t``.
    """
    inst = solution.instance
    sys_ = solution.system
    p = np.clip(solution.x_start, 0.0, 1.0)
    part = inst.partition_of
    mid = np.zeros(inst.n_items)
    s_vals = solution.s
    for a, u in enumerate(sys_.nodes):
        if u.kind == "mid":
            mid[u.item] += s_vals[a, t - 1]
    bounds = np.zeros(inst.n_items)
    for j, item in enumerate(inst.items):
        tie = 0.5 * p[j, t - 1] if j != i else 0.0
        if part[j] == part[i]:
            completed = sum(p[j, tp - 1] * (1.0 - item.sizes.tail(t - tp + 1)) for tp in range(1, t))
            bounds[j] = mid[j] + completed + tie
        else:
            bounds[j] = mid[j] + tie
    return bounds


def drop_bound_decomposition(instance, solution, i, t: int, runs: int, seed=None) -> dict:
    """Which items could block proposal (i, t), and how often, against the per-blocker bounds.

    ``can_block`` is the rate at which some proposal of j precedes (i, t) and
    would block it (by span or by partition), which is what the bound
    controls; ``first`` attributes each actual drop to the earliest-processed
    such proposal, so the ``first`` rates add up to the drop rate.
    """
    i = instance.index[i] if isinstance(i, str) else int(i)
    items, ts, probs = candidate_pairs(solution)
    match = np.flatnonzero((items == i) & (ts == t))
    n = instance.n_items
    bounds = blocker_bounds(solution, i, t)
    if len(match) == 0:
        return {"events": 0, "drop_rate": 0.0, "blockers": _blocker_rows(instance, bounds, np.zeros(n), np.zeros(n), 0)}
    ci = int(match[0])
    part = instance.partition_of
    same = part[items] == part[i]
    events = 0
    can = np.zeros(n)
    first = np.zeros(n)
    drops = 0
    for batch in simulate_batches(instance, solution, runs, seed, evaluate=False):
        rows = batch.sampled[:, ci]
        if not rows.any():
            continue
        smp = batch.sampled[rows]
        keys = batch.keys[rows]
        sizes = batch.sizes[rows]
        before = (ts[None, :] < t) | ((ts[None, :] == t) & (keys < keys[:, [ci]]))
        covers = same[None, :] | (ts[None, :] + sizes - 1 >= t)
        blocks = smp & before & covers
        blocks[:, ci] = False
        events += int(rows.sum())
        drops += int(np.count_nonzero(batch.status[rows, ci] != REAL))
        order = np.where(blocks, ts[None, :] + keys, np.inf)
        has = blocks.any(axis=1)
        first_col = np.argmin(order, axis=1)[has]
        np.add.at(first, items[first_col], 1)
        for j in range(n):
            cols = np.flatnonzero(items == j)
            if len(cols):
                can[j] += np.count_nonzero(blocks[:, cols].any(axis=1))
    return {
        "events": events,
        "drop_rate": drops / events if events else 0.0,
        "blockers": _blocker_rows(instance, bounds, can, first, events),
    }


def _blocker_rows(instance, bounds, can, first, events):
    rows = []
    for j, item in enumerate(instance.items):
        rate = can[j] / events if events else 0.0
        rows.append({
            "blocker": item.id, "can_block": rate,
            "stderr": math.sqrt(rate * (1 - rate) / events) if events else float("nan"),
            "first": first[j] / events if events else 0.0, "bound": float(bounds[j]),
        })
    return rows


# -- survival under a fixed size profile ---------------------------------------

def _survival_parts(solution, size_profile, i):
    inst = solution.instance
    p = np.clip(solution.x_start, 0.0, 1.0)
    u = np.asarray(size_profile, dtype=np.int64)
    part = inst.partition_of
    B = inst.budget
    others = [j for j in range(inst.n_items) if j != i and u[j] >= 1]
    first_copy = np.array([p[i, t - 1] * np.prod(1.0 - p[i, : t - 1]) for t in range(1, B + 1)])
    earlier = np.ones(B)
    for t in range(1, B + 1):
        for j in others:
            lo = 1 if part[j] == part[i] else max(1, t - u[j] + 1)
            earlier[t - 1] *= np.prod(1.0 - p[j, lo - 1 : t - 1])
    same_slot = [p[others, t - 1] for t in range(1, B + 1)]
    return first_copy, earlier, same_slot


def survival_closed_form(solution, size_profile, i: int) -> float:
    """Product-form probability that item i is proposed and its first copy is real.

    Sizes are fixed by ``size_profile`` (0 = item absent). A competitor at the
    same slot is taken to precede i with probability 1/2 independently of the
    others, which is exact with at most one such competitor and a lower bound
    otherwise (see ``survival_exact``).
    """
    first_copy, earlier, same_slot = _survival_parts(solution, size_profile, i)
    tie = np.array([np.prod(1.0 - 0.5 * q) for q in same_slot])
    return float(np.sum(first_copy * earlier * tie))


def _inverse_rank_expectation(q: np.ndarray) -> float:
    """E[1/(K+1)] for K a sum of independent Bernoulli(q)."""
    dist = np.zeros(len(q) + 1)
    dist[0] = 1.0
    for qk in q:
        dist[1:] = dist[1:] * (1 - qk) + dist[:-1] * qk
        dist[0] *= 1 - qk
    return float(dist @ (1.0 / np.arange(1, len(q) + 2)))


def survival_exact(solution, size_profile, i: int) -> float:
    """As ``survival_closed_form`` but with the exact uniform tie-break among same-slot competitors."""
    first_copy, earlier, same_slot = _survival_parts(solution, size_profile, i)
    tie = np.array([_inverse_rank_expectation(q) for q in same_slot])
    return float(np.sum(first_copy * earlier * tie))


def survival_monte_carlo(instance, solution, size_profile, i: int, runs: int, seed=None) -> tuple[float, float]:
    """Simulated probability that i is proposed and ends up real, sizes fixed by the profile."""
    items, _, _ = candidate_pairs(solution)
    cols = np.flatnonzero(items == i)
    hits = 0
    for batch in simulate_batches(instance, solution, runs, seed, size_profile=size_profile, evaluate=False):
        hits += int(np.count_nonzero(batch.real[:, cols].any(axis=1))) if len(cols) else 0
    rate = hits / runs
    return rate, math.sqrt(rate * (1 - rate) / runs)


# -- end to end -------------------------------------------------------------------

def multilinear_value(instance, xbar, guard=DEFAULT_GUARD, n_samples=100_000, seed=0):
    """(value, stderr, exact?) of the multilinear extension at ``xbar``."""
    try:
        return multilinear_exact(instance.objective, xbar, instance, guard), 0.0, True
    except EnumerationGuardError:
        m, e = multilinear_estimate(instance.objective, xbar, instance, n_samples, seed)
        return m, e, False


def end_to_end_ratio(instance, config: GreedyConfig | None = None, runs: int = 100_000, seed=0,
                     opt: float | None = None, stats: dict | None = None, threads: int = 1) -> dict:
    """Full pipeline on one instance against the exact optimum."""
    config = config or GreedyConfig(seed=seed)
    system = build_constraints(instance)
    solution = continuous_greedy(instance, system, config)
    if opt is None:
        opt, _ = optimal_adaptive_dp(instance)
    favg, favg_err = simulate_favg(instance, solution, runs, seed, stats=stats, threads=threads)
    F, F_err, exact = multilinear_value(instance, solution.xbar)
    out = {
        "instance": instance.name, "favg": favg, "favg_stderr": favg_err, "F": F, "F_stderr": F_err,
        "F_exact": exact, "opt": opt, "ratio": None, "ratio_stderr": None,
        "favg_over_F": favg / F if F > 0 else None, "solution": solution,
    }
    if opt > 0:
        out["ratio"] = favg / opt
        out["ratio_stderr"] = favg_err / opt
    return out


# -- reporting ----------------------------------------------------------------------

@dataclass
class VerificationReport:
    rows: list = field(default_factory=list)

    FIELDS = ("property", "instance", "estimate", "stderr", "threshold", "verdict")

    def add(self, prop, instance, estimate, stderr, threshold, passed: bool):
        self.rows.append({
            "property": prop, "instance": instance, "estimate": estimate, "stderr": stderr,
            "threshold": threshold, "verdict": "pass" if passed else "fail",
        })

    @property
    def passed(self) -> bool:
        return all(r["verdict"] == "pass" for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.FIELDS, lineterminator="\r\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r[k]) for k in self.FIELDS})
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v
