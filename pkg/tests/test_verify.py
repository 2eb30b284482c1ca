import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stoknap.cgreedy import GreedyConfig
from stoknap.generate import random_instance
from stoknap.polytope import check_feasibility
from stoknap.verify import (
    APPROX_RATIO,
    GuardExceeded,
    VerificationReport,
    blocker_bounds,
    crs_drop_rate,
    drop_bound_decomposition,
    end_to_end_ratio,
    enumerate_deterministic_opt,
    optimal_adaptive_dp,
    simulate_favg,
    survival_closed_form,
    survival_exact,
    survival_monte_carlo,
    wilson_interval,
)

from conftest import base_instance, expanded_instance, start_solution


def test_approx_ratio_constant():
    assert APPROX_RATIO == pytest.approx(0.1967, abs=5e-5)


def test_dp_single_item():
    inst = expanded_instance({"a": ("p", {1: 1.0}, {1: 2})}, 1)
    assert optimal_adaptive_dp(inst)[0] == 2


def test_dp_prefers_uncapped_copy():
    inst = base_instance({"a": ({1: 0.5, 2: 0.5}, {1: 1, 2: 2})}, 2)
    opt, policy = optimal_adaptive_dp(inst)
    assert opt == pytest.approx(1.5)
    assert policy[((None,), 0)] == "a@2"


def test_dp_same_partition_best_single():
    inst = expanded_instance({"a": ("p", {1: 1.0}, {1: 1}), "b": ("p", {1: 1.0}, {1: 2})}, 2)
    assert optimal_adaptive_dp(inst)[0] == 2


def test_dp_adapts_to_realized_size():
    """After a long first job only short items still fit."""
    inst = base_instance({"a": ({1: 0.5, 3: 0.5}, {1: 1, 3: 1}), "b": ({1: 1.0}, {1: 1}), "c": ({2: 1.0}, {2: 3})},
                         3, 3)
    opt, _ = optimal_adaptive_dp(inst)
    # start c (slots 1-2) then b (slot 3) = 4 beats anything using a
    assert opt == pytest.approx(4.0)


def test_dp_guard():
    with pytest.raises(GuardExceeded):
        optimal_adaptive_dp(random_instance(4, 8, 3, 0), guard=1000)


@pytest.mark.parametrize("seed", range(8))
def test_dp_equals_enumeration(seed):
    rng = np.random.default_rng(seed)
    B = int(rng.integers(2, 6))
    items = {f"i{k}": ({int(rng.integers(1, B + 1)): 1.0}, {}) for k in range(int(rng.integers(1, 4)))}
    items = {k: (s, {next(iter(s)): int(rng.integers(0, 4))}) for k, (s, _) in items.items()}
    inst = base_instance(items, B, 3, {"family": "additive",
                                       "params": {"weights": {k: float(rng.uniform(0.2, 2)) for k in items}}})
    assert abs(optimal_adaptive_dp(inst)[0] - enumerate_deterministic_opt(inst)) <= 1e-9


def test_enumeration_rejects_random_sizes(canonical):
    with pytest.raises(ValueError):
        enumerate_deterministic_opt(canonical)


def test_wilson():
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_lone_pair_never_dropped():
    inst = expanded_instance({"a": ("p", {2: 1.0}, {2: 1})}, 3)
    rows = crs_drop_rate(inst, start_solution(inst, {"a": {1: 0.5}}), 10_000, 0)
    assert len(rows) == 1 and rows[0]["rate"] == 0.0


def test_same_slot_same_partition_symmetric():
    inst = expanded_instance({"a": ("p", {1: 1.0}, {1: 1}), "b": ("p", {1: 1.0}, {1: 1})}, 1)
    sol = start_solution(inst, {"a": {1: 1.0}, "b": {1: 1.0}})
    for r in crs_drop_rate(inst, sol, 100_000, 1):
        assert abs(r["rate"] - 0.5) <= 3 * r["stderr"]


def crs_counterexample(eps):
    """y with 2y feasible where (i, 2) is dropped with probability above 1/2."""
    inst = expanded_instance({"i": ("p", {1: 1.0}, {1: 1}), "j": ("p", {1: 1.0}, {1: 1}),
                              "k": ("q", {1: 1.0}, {1: 1})}, 2)
    y = start_solution(inst, {"j": {1: (1 - eps) / 2}, "i": {2: eps / 2}, "k": {2: (1 - eps) / 2}})
    return inst, y


def test_half_crs_counterexample():
    """Partition blocking and a same-slot tie add up past 1/2 inside the feasible region."""
    eps = 0.05
    inst, y = crs_counterexample(eps)
    assert check_feasibility(y.scaled(2.0)) == []
    analytic = 1 - (1 - (1 - eps) / 2) * (1 - (1 - eps) / 4)
    assert analytic == pytest.approx(0.59969, abs=1e-5)
    row = [r for r in crs_drop_rate(inst, y, 200_000, 3, min_x=0.0) if r["item"] == "i"][0]
    assert abs(row["rate"] - analytic) <= 3 * row["stderr"]
    assert row["rate"] > 0.5 + 3 * row["stderr"]


def test_blocker_zero_mass():
    inst = expanded_instance({"a": ("p", {1: 1.0}, {1: 1}), "b": ("q", {1: 1.0}, {1: 1})}, 2)
    d = drop_bound_decomposition(inst, start_solution(inst, {"a": {2: 0.5}}), "a", 2, 10_000, 0)
    b = [r for r in d["blockers"] if r["blocker"] == "b"][0]
    assert b["can_block"] == 0 and b["bound"] == 0


def test_blocker_same_slot_symmetric():
    inst = expanded_instance({"a": ("p", {1: 1.0}, {1: 1}), "b": ("p", {1: 1.0}, {1: 1})}, 1)
    d = drop_bound_decomposition(inst, start_solution(inst, {"a": {1: 1.0}, "b": {1: 1.0}}), "a", 1, 50_000, 0)
    b = [r for r in d["blockers"] if r["blocker"] == "b"][0]
    assert b["bound"] == pytest.approx(0.5)
    assert b["can_block"] <= b["bound"] + 3 * b["stderr"]
    assert abs(b["can_block"] - 0.5) <= 3 * b["stderr"]


def test_blocker_cross_partition_span():
    """A size-2 item started at t-1 covers t with exactly its start probability."""
    inst = expanded_instance({"a": ("p", {1: 1.0}, {1: 1}), "b": ("q", {2: 1.0}, {2: 1})}, 3)
    sol = start_solution(inst, {"a": {2: 0.5}, "b": {1: 0.3}})
    d = drop_bound_decomposition(inst, sol, "a", 2, 100_000, 0)
    b = [r for r in d["blockers"] if r["blocker"] == "b"][0]
    assert abs(b["can_block"] - 0.3) <= 3 * b["stderr"]
    assert b["bound"] == pytest.approx(0.3)
    assert sum(r["first"] for r in d["blockers"]) == pytest.approx(d["drop_rate"])


@pytest.mark.parametrize("seed", range(3))
def test_first_blocker_rates_sum_to_drop_rate(seed):
    inst = random_instance(3, 5, 2, seed)
    res = end_to_end_ratio(inst, GreedyConfig(step=0.1, n_samples=500, seed=seed), runs=1000, seed=seed)
    sol = res["solution"]
    xs = sol.x_start
    i, t = np.unravel_index(np.argmax(xs), xs.shape)
    d = drop_bound_decomposition(inst, sol, int(i), int(t) + 1, 20_000, seed)
    assert sum(r["first"] for r in d["blockers"]) == pytest.approx(d["drop_rate"])
    assert np.all(blocker_bounds(sol, int(i), int(t) + 1) >= 0)


def test_survival_without_competitors():
    inst = expanded_instance({"a": ("p", {1: 1.0}, {1: 1})}, 3)
    sol = start_solution(inst, {"a": {1: 0.2, 2: 0.3, 3: 0.1}})
    expected = 1 - 0.8 * 0.7 * 0.9
    assert survival_closed_form(sol, [1], 0) == pytest.approx(expected)
    assert survival_exact(sol, [1], 0) == pytest.approx(expected)


def test_survival_closed_form_vs_simulation(canonical):
    sol = start_solution(canonical, {"A@2": {1: 0.3, 2: 0.2}, "B@3": {1: 0.4}, "B@1": {2: 0.3}})
    profile = np.zeros(canonical.n_items, dtype=int)
    profile[canonical.index["A@2"]] = 1
    profile[canonical.index["B@3"]] = 2
    profile[canonical.index["B@1"]] = 1
    i = canonical.index["A@2"]
    exact = survival_exact(sol, profile, i)
    assert survival_closed_form(sol, profile, i) == pytest.approx(exact)  # at most one competitor per slot
    m, e = survival_monte_carlo(canonical, sol, profile, i, 1_000_000, 2)
    assert abs(m - exact) <= 3 * e


def test_closed_form_is_lower_bound_with_ties():
    inst = expanded_instance({"a": ("p", {1: 1.0}, {1: 1}), "b": ("q", {1: 1.0}, {1: 1}),
                              "c": ("r", {1: 1.0}, {1: 1})}, 1)
    sol = start_solution(inst, {"a": {1: 0.5}, "b": {1: 0.8}, "c": {1: 0.8}})
    cf, ex = survival_closed_form(sol, [1, 1, 1], 0), survival_exact(sol, [1, 1, 1], 0)
    assert cf < ex
    m, e = survival_monte_carlo(inst, sol, [1, 1, 1], 0, 200_000, 0)
    assert abs(m - ex) <= 3 * e


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_closed_form_monotone(seed):
    """Growing other items' sizes never raises the survival probability."""
    rng = np.random.default_rng(seed)
    inst = random_instance(3, 5, 2, seed % 50)
    B = inst.budget
    xs = rng.uniform(0, 0.5, (inst.n_items, B)) * (rng.uniform(size=(inst.n_items, B)) < 0.3)
    sol = start_solution(inst, {it.id: {t + 1: xs[k, t] for t in range(B)} for k, it in enumerate(inst.items)})
    i = int(rng.integers(inst.n_items))
    u = rng.integers(0, B + 1, inst.n_items)
    v = np.minimum(u + rng.integers(0, B + 1, inst.n_items), B)
    u[i] = v[i] = max(1, u[i])
    assert survival_closed_form(sol, u, i) >= survival_closed_form(sol, v, i)
    assert survival_exact(sol, u, i) >= survival_exact(sol, v, i) - 1e-15


def test_end_to_end_single_item():
    inst = expanded_instance({"a": ("p", {1: 1.0}, {1: 1})}, 1, 1)
    res = end_to_end_ratio(inst, GreedyConfig(step=0.1), runs=20_000, seed=0)
    assert res["opt"] == 1.0
    assert res["ratio"] >= APPROX_RATIO
    assert abs(res["ratio"] - 0.5) <= 3 * res["ratio_stderr"]


def test_end_to_end_half_of_F(canonical):
    stats = {}
    res = end_to_end_ratio(canonical, GreedyConfig(step=0.05, seed=1), runs=50_000, seed=1, stats=stats)
    assert res["F_exact"]
    assert res["favg"] >= res["F"] / 2 - 3 * res["favg_stderr"]
    assert res["ratio"] >= APPROX_RATIO - 3 * res["ratio_stderr"]
    assert stats["runs"] == 50_000 and stats["matroid"] == stats["overlap"] == stats["overrun"] == 0


def test_simulate_deterministic(canonical):
    sol = start_solution(canonical, {"A@2": {1: 0.5}, "B@3": {1: 0.5}})
    assert simulate_favg(canonical, sol, 30_000, 7) == simulate_favg(canonical, sol, 30_000, 7)


def test_report_csv():
    rep = VerificationReport()
    rep.add("p", "inst,1", 0.25, 0.01, 0.5, True)
    rep.add("q", "inst", float("nan"), 0.0, 0.5, False)
    text = rep.to_csv()
    assert text.endswith("\r\n") and not rep.passed
    rows = list(csv.DictReader(io.StringIO(text)))
    assert rows[0]["instance"] == "inst,1" and rows[0]["verdict"] == "pass"
    assert rows[1]["estimate"] == "nan" and rows[1]["verdict"] == "fail"
