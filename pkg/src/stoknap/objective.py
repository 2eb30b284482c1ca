"""Monotone lattice-submodular objectives and their multilinear extension.

An objective maps a reward vector ``r in [0..M]^n`` (one coordinate per
expanded item) to a nonnegative real. Items are independent, so the
multilinear extension of the lifted set function at ``xbar`` is the
expectation of ``f`` when item ``i`` contributes a reward drawn from its
reward distribution with probability ``xbar[i]`` and 0 otherwise.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

DEFAULT_GUARD = 12
MAX_OUTCOMES = 1 << 22
_CHUNK = 1 << 16


class EnumerationGuardError(RuntimeError):
    """Exact enumeration was requested beyond its size guard; use a sampler."""


class ObjectiveFunction:
    """Base class. Subclasses implement ``evaluate_batch`` on an (N, n) array."""

    family: str = "abstract"
    n: int = 0

    def evaluate(self, r) -> float:
        r = np.asarray(r, dtype=np.int64).reshape(1, -1)
        return float(self.evaluate_batch(r)[0])

    def evaluate_batch(self, R: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def violations(self) -> list[str]:
        return []

    def __call__(self, r) -> float:
        return self.evaluate(r)


class Additive(ObjectiveFunction):
    """f(r) = sum_i w_i r_i."""

    family = "additive"

    def __init__(self, weights: Sequence[float]):
        self.weights = np.asarray(weights, dtype=float)
        self.n = len(self.weights)

    def evaluate_batch(self, R):
        return np.asarray(R, dtype=float) @ self.weights

    def violations(self):
        return [f"weight {w} of coordinate {k} is negative" for k, w in enumerate(self.weights) if w < 0]


class ConcaveOfSum(ObjectiveFunction):
    """f(r) = g(sum_i w_i r_i) with g piecewise linear through ``breakpoints``.

    ``g`` is flat before the first and after the last breakpoint. Concavity is
    not enforced on construction (``violations`` reports it) so that
    counterexamples can be built on purpose.
    """

    family = "concave_of_sum"

    def __init__(self, weights: Sequence[float], breakpoints: Sequence[tuple[float, float]]):
        self.weights = np.asarray(weights, dtype=float)
        self.n = len(self.weights)
        bp = sorted((float(x), float(y)) for x, y in breakpoints)
        if not bp:
            raise ValueError("concave_of_sum needs at least one breakpoint")
        self.xs = np.array([x for x, _ in bp])
        self.ys = np.array([y for _, y in bp])

    def g(self, z):
        return np.interp(z, self.xs, self.ys)

    def evaluate_batch(self, R):
        return self.g(np.asarray(R, dtype=float) @ self.weights)

    def violations(self):
        out = [f"weight {w} of coordinate {k} is negative" for k, w in enumerate(self.weights) if w < 0]
        if len(self.xs) > 1:
            slopes = np.diff(self.ys) / np.diff(self.xs)
            if np.any(slopes < -1e-12):
                out.append("g is decreasing somewhere")
            if np.any(np.diff(slopes) > 1e-12):
                out.append("g is not concave (slopes increase)")
        if self.ys.min() < 0:
            out.append("g takes negative values")
        return out


class NestedCoverage(ObjectiveFunction):
    """f(r) = weight of the union over i of A_i(r_i), with A_i(0) ⊆ A_i(1) ⊆ ...

    ``chains[i]`` maps a level to the elements added at that level; the set at
    level ``l`` is everything added at levels ``<= l``.
    """

    family = "nested_coverage"

    def __init__(self, element_weights: Mapping[str, float], chains: Sequence[Mapping[int, Sequence[str]]]):
        self.elements = sorted(element_weights)
        self.element_weights = np.array([float(element_weights[e]) for e in self.elements])
        self.n = len(chains)
        col = {e: k for k, e in enumerate(self.elements)}
        never = np.iinfo(np.int64).max
        self.threshold = np.full((self.n, len(self.elements)), never, dtype=np.int64)
        self._unknown = []
        for i, chain in enumerate(chains):
            for level, elems in chain.items():
                for e in elems:
                    if e not in col:
                        self._unknown.append((i, e))
                        continue
                    k = col[e]
                    self.threshold[i, k] = min(self.threshold[i, k], int(level))

    def evaluate_batch(self, R):
        R = np.asarray(R, dtype=np.int64)
        out = np.empty(len(R))
        for lo in range(0, len(R), _CHUNK):
            block = R[lo : lo + _CHUNK]
            covered = np.any(block[:, :, None] >= self.threshold[None, :, :], axis=1)
            out[lo : lo + _CHUNK] = covered @ self.element_weights
        return out

    def violations(self):
        out = [f"element {e!r} has negative weight" for e, w in zip(self.elements, self.element_weights) if w < 0]
        out += [f"coordinate {i} names unknown element {e!r}" for i, e in self._unknown]
        return out


FAMILIES = ("additive", "concave_of_sum", "nested_coverage")


def build_objective(spec: Mapping, groups: Sequence[str]) -> ObjectiveFunction:
    """Build an objective over expanded items from a spec keyed by group (base id).

    Every item of a group gets the group's parameters, which is exact for
    capped copies because at most one copy per group is ever rewarded.
    """
    family = spec["family"]
    params = spec.get("params", {}) or {}
    default_w = float(params.get("default_weight", 1.0))
    weights_by_group = params.get("weights", {}) or {}

    def weights():
        return [float(weights_by_group.get(g, default_w)) for g in groups]

    if family == "additive":
        return Additive(weights())
    if family == "concave_of_sum":
        return ConcaveOfSum(weights(), params["breakpoints"])
    if family == "nested_coverage":
        chains_by_group = params.get("chains", {})
        chains = [{int(k): v for k, v in chains_by_group.get(g, {}).items()} for g in groups]
        return NestedCoverage(params["element_weights"], chains)
    raise ValueError(f"unknown objective family {family!r}; expected one of {FAMILIES}")


def evaluate(f: ObjectiveFunction, r, reward_bound: int | None = None) -> float:
    """Evaluate ``f`` at a reward vector after checking its domain."""
    r = np.asarray(r)
    if r.shape != (f.n,):
        raise ValueError(f"reward vector has shape {r.shape}, objective expects ({f.n},)")
    if np.any(r < 0) or (reward_bound is not None and np.any(r > reward_bound)):
        raise ValueError(f"reward vector {r.tolist()} outside [0, {reward_bound}]")
    if np.any(r != np.round(r)):
        raise ValueError("rewards must be integers")
    return f.evaluate(r.astype(np.int64))


# -- exact expectations -------------------------------------------------------

def _expectation(f: ObjectiveFunction, dists: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """E[f(r)] for independent coordinates, coordinate k ~ dists[k] = (values, probs)."""
    dists = [(v[p > 0], p[p > 0]) for v, p in dists]
    radix = np.array([len(v) for v, _ in dists], dtype=np.int64)
    total = int(np.prod(radix, dtype=object))
    if total > MAX_OUTCOMES:
        raise EnumerationGuardError(f"{total} joint outcomes exceed the exact-enumeration limit {MAX_OUTCOMES}")
    n = len(dists)
    acc = 0.0
    for lo in range(0, total, _CHUNK):
        idx = np.arange(lo, min(total, lo + _CHUNK), dtype=np.int64)
        R = np.empty((len(idx), n), dtype=np.int64)
        prob = np.ones(len(idx))
        rest = idx
        for k in range(n - 1, -1, -1):
            digit = rest % radix[k]
            rest = rest // radix[k]
            R[:, k] = dists[k][0][digit]
            prob *= dists[k][1][digit]
        acc += float(prob @ f.evaluate_batch(R))
    return acc


def _mixed_dists(instance, xbar) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for (vals, probs), x in zip(instance.reward_tables, xbar):
        x = float(min(max(x, 0.0), 1.0))
        v = np.concatenate([[0], vals])
        p = np.concatenate([[1.0 - x], x * probs])
        uniq = np.unique(v)
        merged = np.array([p[v == u].sum() for u in uniq])
        out.append((uniq, merged))
    return out


def lifted_value(f: ObjectiveFunction, S, instance, guard: int = DEFAULT_GUARD) -> float:
    """E[f(r)] with items in ``S`` drawing their rewards and all others pinned to 0."""
    S = {instance.index[s] if isinstance(s, str) else int(s) for s in S}
    nontrivial = sum(1 for i in S if len(instance.reward_tables[i][0]) > 1)
    if nontrivial > guard:
        raise EnumerationGuardError(f"{nontrivial} random items in S exceed the guard {guard}")
    xbar = np.zeros(instance.n_items)
    xbar[list(S)] = 1.0
    return _expectation(f, _mixed_dists(instance, xbar))


def multilinear_exact(f: ObjectiveFunction, xbar, instance, guard: int = DEFAULT_GUARD) -> float:
    """Exact multilinear extension of the lifted set function at ``xbar``."""
    xbar = np.asarray(xbar, dtype=float)
    active = int(np.count_nonzero(xbar > 0))
    if active > guard:
        raise EnumerationGuardError(f"{active} items with positive xbar exceed the guard {guard}")
    return _expectation(f, _mixed_dists(instance, xbar))


def exact_marginals(f: ObjectiveFunction, xbar, instance, guard: int = DEFAULT_GUARD) -> np.ndarray:
    """F(xbar with coordinate i set to 1) - F(xbar), for every i."""
    xbar = np.asarray(xbar, dtype=float)
    base = multilinear_exact(f, xbar, instance, guard + 1)
    out = np.empty(len(xbar))
    for i in range(len(xbar)):
        y = xbar.copy()
        y[i] = 1.0
        out[i] = multilinear_exact(f, y, instance, guard + 1) - base
    return out


# -- sampling -----------------------------------------------------------------

def _draw_world(instance, xbar, N, rng):
    """Inclusion mask and an independent reward draw for every (sample, item)."""
    values, cdf = instance.reward_sampling_table
    include = rng.random((N, instance.n_items)) < np.asarray(xbar)[None, :]
    u = rng.random((N, instance.n_items))
    col = (u[:, :, None] >= cdf[None, :, :]).sum(axis=2)
    rewards = np.take_along_axis(np.broadcast_to(values, (N,) + values.shape), col[:, :, None], axis=2)[:, :, 0]
    return include, rewards


def _mean_stderr(samples: np.ndarray) -> tuple[float, float]:
    n = len(samples)
    mean = float(samples.mean())
    if n < 2:
        return mean, 0.0
    return mean, float(samples.std(ddof=1) / np.sqrt(n))


def multilinear_estimate(f: ObjectiveFunction, xbar, instance, N: int, seed=None) -> tuple[float, float]:
    """Unbiased Monte-Carlo estimate of the multilinear extension: (mean, stderr)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    include, rewards = _draw_world(instance, xbar, N, rng)
    return _mean_stderr(f.evaluate_batch(np.where(include, rewards, 0)))


def marginal_weights(f: ObjectiveFunction, xbar, instance, N: int, seed=None):
    """Paired estimates of F(xbar ∨ 1_i) - F(xbar) for all items at once.

    One set of N worlds is shared by every item (common random numbers): the
    base world includes item i with probability ``xbar[i]``, the forced world
    always includes it with the same reward draw.

    Returns (means, stderrs, (F_mean, F_stderr)).
    """
    rng = np.random.default_rng(seed)
    include, rewards = _draw_world(instance, xbar, N, rng)
    world = np.where(include, rewards, 0)
    base = f.evaluate_batch(world)
    means = np.empty(instance.n_items)
    errs = np.empty(instance.n_items)
    for i in range(instance.n_items):
        forced = world.copy()
        forced[:, i] = rewards[:, i]
        means[i], errs[i] = _mean_stderr(f.evaluate_batch(forced) - base)
    return means, errs, _mean_stderr(base)


def marginal_weight_estimate(f: ObjectiveFunction, xbar, i: int, instance, N: int, seed=None) -> tuple[float, float]:
    """Paired estimate of F(xbar ∨ 1_i) - F(xbar) for one item: (mean, stderr)."""
    rng = np.random.default_rng(seed)
    include, rewards = _draw_world(instance, xbar, N, rng)
    world = np.where(include, rewards, 0)
    forced = world.copy()
    forced[:, i] = rewards[:, i]
    return _mean_stderr(f.evaluate_batch(forced) - f.evaluate_batch(world))


# -- property checker ---------------------------------------------------------

@dataclass
class PropertyReport:
    exhaustive: bool
    checked_pairs: int
    monotone_violations: list = field(default_factory=list)
    submodular_violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.monotone_violations and not self.submodular_violations


def check_monotone_lattice_submodular(
    f: ObjectiveFunction,
    n: int | None = None,
    M: int = 1,
    exhaustive_guard: int = 10**6,
    n_samples: int = 200_000,
    seed=0,
    tol: float = 1e-9,
) -> PropertyReport:
    """Scan for violations of monotonicity and lattice-submodularity on [0..M]^n.

    Exhaustive over all vector pairs when (M+1)^(2n) <= ``exhaustive_guard``,
    otherwise random pairs. Violations are (u, v, slack) with slack < 0.
    """
    n = f.n if n is None else n
    D = (M + 1) ** n
    grid = np.array(list(itertools.product(range(M + 1), repeat=n)), dtype=np.int64) if D * D <= exhaustive_guard else None
    report = PropertyReport(exhaustive=grid is not None, checked_pairs=0)
    if grid is not None:
        values = f.evaluate_batch(grid)
        radix = (M + 1) ** np.arange(n - 1, -1, -1)
        a, b = np.triu_indices(D)
        U, V = grid[a], grid[b]
        meet = np.minimum(U, V) @ radix
        join = np.maximum(U, V) @ radix
        slack = values[a] + values[b] - values[meet] - values[join]
        report.checked_pairs = len(a)
        le = np.all(U <= V, axis=1)
        mono = values[b] - values[a]
        mono_pairs = (U, V)
    else:
        rng = np.random.default_rng(seed)
        U = rng.integers(0, M + 1, size=(n_samples, n))
        V = rng.integers(0, M + 1, size=(n_samples, n))
        fu, fv = f.evaluate_batch(U), f.evaluate_batch(V)
        slack = fu + fv - f.evaluate_batch(np.minimum(U, V)) - f.evaluate_batch(np.maximum(U, V))
        report.checked_pairs = n_samples
        # monotonicity along u <= u ∨ v
        le = np.ones(n_samples, dtype=bool)
        J = np.maximum(U, V)
        mono = f.evaluate_batch(J) - fu
        mono_pairs = (U, J)
    scale = 1.0 + np.abs(slack)
    for k in np.flatnonzero(slack < -tol * scale):
        report.submodular_violations.append((U[k].tolist(), V[k].tolist(), float(slack[k])))
    for k in np.flatnonzero(le & (mono < -tol)):
        report.monotone_violations.append((mono_pairs[0][k].tolist(), mono_pairs[1][k].tolist(), float(mono[k])))
    return report
