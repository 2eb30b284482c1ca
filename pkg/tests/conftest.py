import numpy as np
import pytest

from stoknap.io import instance_from_dict
from stoknap.polytope import FractionalSolution, build_constraints


def base_instance(items, budget, reward_bound=2, objective=None, name="t"):
    """items: {id: (sizes, rewards)} in base form."""
    return instance_from_dict({
        "name": name, "budget": budget, "reward_bound": reward_bound,
        "objective": objective or {"family": "additive", "params": {}},
        "expanded": False,
        "base_items": [{"id": k, "sizes": s, "rewards": r} for k, (s, r) in items.items()],
    })


def expanded_instance(items, budget, reward_bound=2, objective=None, name="t"):
    """items: {id: (partition, sizes, rewards)} with cap = max size."""
    return instance_from_dict({
        "name": name, "budget": budget, "reward_bound": reward_bound,
        "objective": objective or {"family": "additive", "params": {}},
        "expanded": True,
        "items": [
            {"id": k, "partition": p, "cap": max(s), "sizes": s, "rewards": r}
            for k, (p, s, r) in items.items()
        ],
    })


def start_solution(instance, pulls):
    """Solution with given start pulls {item id: {t: x}}."""
    system = build_constraints(instance)
    xs = np.zeros((instance.n_items, instance.budget))
    for item, slots in pulls.items():
        for t, v in slots.items():
            xs[instance.index[item], t - 1] = v
    return FractionalSolution.from_start_pulls(system, xs)


@pytest.fixture
def canonical():
    """Two base items in separate partitions, B=3."""
    return base_instance(
        {"A": ({1: 0.5, 2: 0.5}, {1: 1, 2: 2}), "B": ({1: 0.4, 3: 0.6}, {1: 0, 3: 2})},
        budget=3, reward_bound=2,
        objective={"family": "concave_of_sum",
                   "params": {"weights": {"A": 1.0, "B": 1.5}, "breakpoints": [[0, 0], [2, 2], [5, 3]]}},
        name="canonical",
    )


ACCEPTANCE_LINES = []


def record(criterion, passed, detail):
    line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
