"""scikit-learn style wrapper around the solve/round pipeline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cgreedy import GreedyConfig, continuous_greedy
from .model import Instance, InstanceError, validate_instance
from .polytope import build_constraints
from .rounding import candidate_pairs, draw_batch, execute_batch
from .verify import simulate_favg


def check_instance(instance) -> Instance:
    if not isinstance(instance, Instance):
        raise TypeError(f"expected an Instance, got {type(instance).__name__}")
    problems = validate_instance(instance)
    if problems:
        raise InstanceError("; ".join(problems))
    return instance


class StochasticKnapsackPolicy(BaseEstimator):
    """Fit = continuous greedy on an instance; predict = rounded executions.

    Parameters mirror :class:`GreedyConfig`; ``random_state`` seeds both the
    greedy and, unless overridden per call, the rounding.
    """

    def __init__(self, stopping_time=0.5, step=None, n_samples=2000, exact_marginals=False, random_state=0):
        self.stopping_time = stopping_time
        self.step = step
        self.n_samples = n_samples
        self.exact_marginals = exact_marginals
        self.random_state = random_state

    def fit(self, instance, y=None):
        instance = check_instance(instance)
        config = GreedyConfig(self.stopping_time, self.step, self.n_samples, self.random_state, self.exact_marginals)
        self.instance_ = instance
        self.system_ = build_constraints(instance)
        self.solution_ = continuous_greedy(instance, self.system_, config)
        self.xbar_ = self.solution_.xbar
        self.trace_ = self.solution_.meta["trace"]
        return self

    def _check(self, instance):
        check_is_fitted(self, "solution_")
        if instance is not None and instance != self.instance_:
            raise ValueError("policy was fitted on a different instance")

    def predict(self, n_runs=1, instance=None, random_state=None):
        """Reward vectors of ``n_runs`` executions, shape (n_runs, n_items)."""
        self._check(instance)
        inst = self.instance_
        seed = self.random_state if random_state is None else random_state
        items, ts, probs = candidate_pairs(self.solution_)
        batch = draw_batch(inst, items, ts, probs, int(n_runs), np.random.default_rng(seed))
        return execute_batch(inst, batch).rewards

    def score(self, instance=None, y=None, n_runs=100_000, random_state=None):
        """Monte-Carlo f_avg of the fitted policy."""
        self._check(instance)
        seed = self.random_state if random_state is None else random_state
        return simulate_favg(self.instance_, self.solution_, n_runs, seed)[0]
