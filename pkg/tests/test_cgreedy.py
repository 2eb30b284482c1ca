import numpy as np
import pytest

from stoknap.cgreedy import GreedyConfig, continuous_greedy, greedy_quality_report, singleton_infeasible
from stoknap.generate import random_instance
from stoknap.polytope import build_constraints
from stoknap.verify import optimal_adaptive_dp

from conftest import expanded_instance

SINGLE = dict(items={"a": ("p", {1: 1.0}, {1: 1})}, budget=1, reward_bound=1)


def test_single_item_five_steps():
    inst = expanded_instance(**SINGLE)
    sol = continuous_greedy(inst, build_constraints(inst), GreedyConfig(step=0.1, n_samples=200))
    assert sol.meta["iterations"] == 5
    assert sol.xbar[0] == pytest.approx(0.5)


def test_exact_marginals_path():
    inst = expanded_instance(**SINGLE)
    sol = continuous_greedy(inst, build_constraints(inst), GreedyConfig(step=0.1, exact_marginals=True))
    assert sol.xbar[0] == pytest.approx(0.5)
    assert sol.meta["trace"][-1]["objective_estimate"] == pytest.approx(0.4)


def test_zero_objective_gives_zero_point():
    inst = expanded_instance({"a": ("p", {1: 1.0}, {1: 1})}, 1, 1, {"family": "additive", "params": {"weights": {"a": 0}}})
    sol = continuous_greedy(inst, build_constraints(inst), GreedyConfig(step=0.1))
    assert sol.xbar.tolist() == [0.0]
    assert sol.meta["zero_weight_iterations"] == list(range(5))


def test_default_step():
    cfg = GreedyConfig()
    assert cfg.resolved_step(2) == pytest.approx(0.05)
    k = cfg.iterations(3)
    assert k == 27 and 0.5 / k <= 1 / 54


def test_step_must_divide():
    with pytest.raises(ValueError):
        GreedyConfig(step=0.3).iterations(1)
    with pytest.raises(ValueError):
        GreedyConfig(stopping_time=1.5).iterations(1)


def test_singleton_check_passes_on_expansions():
    assert singleton_infeasible(random_instance(2, 3, 2, 0)) == []


def test_greedy_deterministic():
    inst = random_instance(2, 4, 2, 3)
    sys_ = build_constraints(inst)
    a = continuous_greedy(inst, sys_, GreedyConfig(step=0.05, seed=11))
    b = continuous_greedy(inst, sys_, GreedyConfig(step=0.05, seed=11))
    assert np.array_equal(a.values, b.values)


def test_quality_report_zero_opt():
    inst = expanded_instance({"a": ("p", {1: 1.0}, {1: 0})}, 1, 1)
    sol = continuous_greedy(inst, build_constraints(inst), GreedyConfig(step=0.1))
    rep = greedy_quality_report(inst, sol, opt_value=0.0)
    assert rep["ratio"] is None and rep["F_value"] == 0


def test_quality_report_single_item():
    inst = expanded_instance(**SINGLE)
    sol = continuous_greedy(inst, build_constraints(inst), GreedyConfig(step=0.1))
    opt, _ = optimal_adaptive_dp(inst)
    rep = greedy_quality_report(inst, sol, opt_value=opt)
    assert rep["exact"] and rep["ratio"] >= 0.39
    assert not rep["flag_low"]
