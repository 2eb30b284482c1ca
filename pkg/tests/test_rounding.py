import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stoknap.cgreedy import GreedyConfig, continuous_greedy
from stoknap.generate import random_instance
from stoknap.model import reward_distribution
from stoknap.polytope import FractionalSolution, build_constraints
from stoknap.rounding import (
    REAL,
    Proposal,
    batch_violations,
    candidate_pairs,
    draw_batch,
    execute,
    execute_batch,
    order_proposals,
    run_policy_once,
    sample_proposals,
    simulate_batches,
)
from stoknap.verify import simulate_favg

from conftest import expanded_instance, start_solution

TWO = {"A": ("pa", {1: 1.0}, {1: 1}), "B": ("pb", {1: 1.0}, {1: 2})}


def greedy(inst, seed=0):
    return continuous_greedy(inst, build_constraints(inst), GreedyConfig(step=0.1, n_samples=500, seed=seed))


def test_zero_solution_proposes_nothing(canonical):
    sol = FractionalSolution.zeros(build_constraints(canonical))
    assert all(sample_proposals(sol, s) == [] for s in range(20))


def test_certain_pair_always_proposed():
    inst = expanded_instance(TWO, 2)
    sol = start_solution(inst, {"A": {1: 1.0}})
    assert all(Proposal(0, 1) in sample_proposals(sol, s) for s in range(20))


def test_half_pair_frequency():
    inst = expanded_instance(TWO, 2)
    sol = start_solution(inst, {"A": {1: 0.5}})
    n = 100_000
    hits = sum(int(b.sampled.sum()) for b in simulate_batches(inst, sol, n, 0, evaluate=False))
    assert abs(hits / n - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_scalar_sampler_frequency():
    inst = expanded_instance(TWO, 2)
    sol = start_solution(inst, {"A": {1: 0.5}})
    n = 4000
    hits = sum(len(sample_proposals(sol, s)) for s in range(n))
    assert abs(hits / n - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_order_by_slot():
    ordered = order_proposals([Proposal(0, 3), Proposal(1, 1), Proposal(2, 2)], 0)
    assert [p.t for p in ordered] == [1, 2, 3]
    assert order_proposals([], 0) == []


def test_tie_order_uniform():
    n = 4000
    first = sum(order_proposals([Proposal(0, 1), Proposal(1, 1)], s)[0].item == 0 for s in range(n))
    assert abs(first / n - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_single_proposal_reward_distribution():
    inst = expanded_instance({"A": ("p", {1: 0.2, 2: 0.3, 3: 0.5}, {1: 0, 2: 1, 3: 1})}, 3)
    q = reward_distribution(inst.items[0])
    n = 3000
    counts = {}
    for s in range(n):
        tr = execute([Proposal(0, 1)], inst, s)
        assert tr.entries[0].status == "real"
        counts[tr.rewards[0]] = counts.get(tr.rewards[0], 0) + 1
    for r, p in q.items():
        assert abs(counts.get(r, 0) / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_tie_loser_is_phantom():
    inst = expanded_instance(TWO, 2)
    tr = execute([Proposal(0, 1), Proposal(1, 1)], inst, 0)
    assert [e.status for e in tr.entries] == ["real", "phantom"]
    assert tr.entries[1].cause == "slot_unavailable" and tr.entries[1].blocker == "A@1"


def test_consecutive_spans_both_real():
    inst = expanded_instance({"A": ("pa", {1: 1.0}, {1: 1}), "B": ("pb", {2: 1.0}, {2: 2})}, 3)
    tr = execute([Proposal(0, 1), Proposal(1, 2)], inst, 0)
    assert [e.status for e in tr.entries] == ["real", "real"]
    assert tr.unavailable == [1, 2, 3] and tr.violations(inst) == []


def test_partition_and_duplicate_causes():
    inst = expanded_instance({"A": ("p", {1: 1.0}, {1: 1}), "B": ("p", {1: 1.0}, {1: 1})}, 3)
    tr = execute([Proposal(0, 1), Proposal(1, 2), Proposal(0, 3)], inst, 0)
    assert [e.cause for e in tr.entries] == ["", "partition_used", "duplicate_item"]


def test_phantom_span_blocks():
    """A phantom's span still marks slots."""
    inst = expanded_instance({"A": ("p", {1: 1.0}, {1: 1}), "B": ("p", {3: 1.0}, {3: 1}), "C": ("q", {1: 1.0}, {1: 1})}, 3)
    tr = execute([Proposal(0, 1), Proposal(1, 1), Proposal(2, 2)], inst, 0)
    assert [e.status for e in tr.entries] == ["real", "phantom", "phantom"]
    assert tr.entries[2].blocker == "B@1"


def test_zero_solution_value(canonical):
    sol = FractionalSolution.zeros(build_constraints(canonical))
    f0 = canonical.objective.evaluate(np.zeros(canonical.n_items))
    assert all(run_policy_once(canonical, sol, s)[1] == f0 for s in range(5))
    assert simulate_favg(canonical, sol, 1000, 0) == (f0, 0.0)


def test_deterministic_single_item():
    inst = expanded_instance({"A": ("p", {1: 1.0}, {1: 2})}, 1)
    sol = start_solution(inst, {"A": {1: 1.0}})
    assert all(run_policy_once(inst, sol, s)[1] == 2.0 for s in range(5))
    assert simulate_favg(inst, sol, 1000, 0) == (2.0, 0.0)


def test_oversized_start_mass_rejected():
    inst = expanded_instance(TWO, 2)
    with pytest.raises(ValueError):
        sample_proposals(start_solution(inst, {"A": {1: 1.5}}), 0)


def _runs_of(batch, r):
    cols = [c for c in np.flatnonzero(batch.sampled[r])]
    cols.sort(key=lambda c: (batch.pair_t[c], batch.keys[r, c]))
    return cols


@pytest.mark.parametrize("seed", range(6))
def test_batch_matches_scalar_executor(seed):
    """Same draws through both executors give the same statuses and rewards."""
    inst = random_instance(3, 5, 2, seed)
    sol = greedy(inst, seed)
    items, ts, probs = candidate_pairs(sol)
    batch = execute_batch(inst, draw_batch(inst, items, ts, probs * 1.6, 300, np.random.default_rng(seed)))
    for r in range(batch.runs):
        cols = _runs_of(batch, r)
        tr = execute([Proposal(int(items[c]), int(ts[c])) for c in cols], inst,
                     sizes=[int(batch.sizes[r, c]) for c in cols])
        assert [e.status == "real" for e in tr.entries] == [batch.status[r, c] == REAL for c in cols]
        assert np.array_equal(tr.rewards, batch.rewards[r])
        assert tr.violations(inst) == []
        assert batch.values[r] == pytest.approx(inst.objective.evaluate(tr.rewards))


@pytest.mark.parametrize("seed", range(6))
def test_direct_drop_rule(seed):
    """A proposal is dropped iff an earlier sampled proposal shares its partition or spans its slot."""
    inst = random_instance(3, 6, 2, 10 + seed)
    sol = greedy(inst, seed)
    items, ts, probs = candidate_pairs(sol)
    batch = execute_batch(inst, draw_batch(inst, items, ts, np.minimum(probs * 1.8, 1), 300,
                                           np.random.default_rng(seed)), evaluate=False)
    part = inst.partition_of[items]
    for r in range(batch.runs):
        cols = _runs_of(batch, r)
        for k, c in enumerate(cols):
            blocked = any(part[d] == part[c] or ts[d] + batch.sizes[r, d] - 1 >= ts[c] for d in cols[:k])
            assert (batch.status[r, c] != REAL) == blocked


def _exact_favg(inst, sol):
    """Enumerate proposal sets, tie orders and sizes; decide reals by the direct rule."""
    items, ts, probs = candidate_pairs(sol)
    P = len(items)
    f = inst.objective
    part = inst.partition_of[items]
    total = 0.0
    for mask in itertools.product([0, 1], repeat=P):
        pm = np.prod([p if m else 1 - p for p, m in zip(probs, mask)])
        chosen = [c for c in range(P) if mask[c]]
        perms = list(itertools.permutations(chosen))
        perms = [q for q in perms if all(ts[q[a]] <= ts[q[a + 1]] for a in range(len(q) - 1))]
        for order in perms:
            for sz in itertools.product(*[list(inst.items[items[c]].sizes.probs.items()) for c in order]):
                w = pm / len(perms) * np.prod([p for _, p in sz])
                r = np.zeros(inst.n_items, dtype=np.int64)
                for k, c in enumerate(order):
                    if not any(part[order[a]] == part[c] or ts[order[a]] + sz[a][0] - 1 >= ts[c] for a in range(k)):
                        r[items[c]] = inst.items[items[c]].rewards(sz[k][0])
                total += w * f.evaluate(r)
    return total


def test_favg_matches_exhaustive_enumeration(canonical):
    sol = start_solution(canonical, {"A@2": {1: 0.5}, "B@2": {1: 0.3, 2: 0.4}})
    exact = _exact_favg(canonical, sol)
    m, e = simulate_favg(canonical, sol, 100_000, 4)
    assert abs(m - exact) <= 3 * e


def test_threads_do_not_change_output(canonical):
    sol = start_solution(canonical, {"A@2": {1: 0.5}, "B@3": {1: 0.6}})
    assert simulate_favg(canonical, sol, 50_000, 1, threads=1) == simulate_favg(canonical, sol, 50_000, 1, threads=3)


def test_run_policy_deterministic(canonical):
    sol = start_solution(canonical, {"A@2": {1: 0.5, 2: 0.2}, "B@1": {1: 0.4}})
    a, b = run_policy_once(canonical, sol, 5), run_policy_once(canonical, sol, 5)
    assert a[1] == b[1] and a[2].rows() == b[2].rows()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.5, 2.0))
def test_executions_always_feasible(seed, boost):
    """Matroid, disjointness and horizon hold even at inflated sampling rates."""
    inst = random_instance(3, 5, 2, seed % 1000)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0, 1, (inst.n_items, inst.budget)) * (rng.uniform(size=(inst.n_items, inst.budget)) < 0.3)
    xs *= inst.caps[:, None] + np.arange(inst.budget)[None, :] <= inst.budget
    sol = FractionalSolution.from_start_pulls(build_constraints(inst), np.minimum(xs * boost, 1))
    items, ts, probs = candidate_pairs(sol)
    batch = execute_batch(inst, draw_batch(inst, items, ts, probs, 200, rng))
    assert batch_violations(inst, batch) == {"matroid": 0, "overlap": 0, "overrun": 0, "total_size": 0}
    assert np.all((batch.status >= 2) | ~batch.sampled | (batch.status == REAL))
