"""Problem instances, size-cap expansion and the spot-scheduling reduction.

Sizes are positive integers measured in time slots, rewards are integers in
``[0, M]``. A base item is expanded into one capped copy per cap value
``b in 1..B``; all copies of a base item share a partition of the matroid so
that a policy commits to at most one cap per item.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from types import MappingProxyType
from typing import Any, Iterable, Mapping

import numpy as np

PROB_TOL = 1e-12


class InstanceError(ValueError):
    """Raised when an instance or one of its parts is malformed."""


def _frozen_map(mapping: Mapping, key=int, value=float) -> Mapping:
    items = sorted((key(k), value(v)) for k, v in mapping.items())
    return MappingProxyType(dict(items))


@dataclass(frozen=True, eq=False)
class SizeDistribution:
    """Sparse distribution over integer sizes."""

    probs: Mapping[int, float]

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen_map(self.probs))

    def __eq__(self, other):
        return isinstance(other, SizeDistribution) and dict(self.probs) == dict(other.probs)

    def __repr__(self):
        return f"SizeDistribution({dict(self.probs)!r})"

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(s for s, p in self.probs.items() if p > 0)

    @property
    def max_size(self) -> int:
        return max(self.probs) if self.probs else 0

    def pmf(self, s: int) -> float:
        return self.probs.get(s, 0.0)

    def tail(self, s: int) -> float:
        """Pr[size >= s]."""
        return sum(p for size, p in self.probs.items() if size >= s)

    def mean(self) -> float:
        return sum(s * p for s, p in self.probs.items())

    def violations(self, max_size: int | None = None) -> list[str]:
        out = []
        total = sum(self.probs.values())
        if abs(total - 1.0) > PROB_TOL:
            out.append(f"probabilities sum to {total!r} (residual mass {1.0 - total:+.3g})")
        for s, p in self.probs.items():
            if s < 1:
                out.append(f"size {s} is not a positive integer")
            if max_size is not None and s > max_size:
                out.append(f"size {s} exceeds maximum {max_size}")
            if not (0.0 < p <= 1.0):
                out.append(f"probability {p!r} of size {s} outside (0, 1]")
        return out


@dataclass(frozen=True, eq=False)
class RewardCurve:
    """Non-decreasing map from size to integer reward.

    Sizes between declared keys take the value of the nearest declared size
    below them (0 below the first key), so a curve given on a sparse support
    can be read at any cap.
    """

    values: Mapping[int, int]

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_map(self.values, value=int))

    def __eq__(self, other):
        return isinstance(other, RewardCurve) and dict(self.values) == dict(other.values)

    def __repr__(self):
        return f"RewardCurve({dict(self.values)!r})"

    def __call__(self, size: int) -> int:
        if size in self.values:
            return self.values[size]
        below = [s for s in self.values if s <= size]
        return self.values[max(below)] if below else 0

    def restrict(self, sizes: Iterable[int]) -> "RewardCurve":
        return RewardCurve({s: self(s) for s in sizes})

    def decreasing_pairs(self) -> list[tuple[int, int]]:
        keys = list(self.values)
        return [(a, b) for a, b in zip(keys, keys[1:]) if self.values[b] < self.values[a]]


@dataclass(frozen=True)
class BaseItem:
    id: str
    sizes: SizeDistribution
    rewards: RewardCurve

    @classmethod
    def from_dicts(cls, id: str, sizes: Mapping, rewards: Mapping) -> "BaseItem":
        return cls(str(id), SizeDistribution(sizes), RewardCurve(rewards))


@dataclass(frozen=True)
class ExpandedItem:
    id: str
    base_id: str
    cap: int
    sizes: SizeDistribution
    rewards: RewardCurve
    partition_id: str


@dataclass(frozen=True)
class PartitionMatroid:
    partitions: Mapping[str, frozenset]

    def __post_init__(self):
        parts = {str(k): frozenset(v) for k, v in sorted(self.partitions.items())}
        object.__setattr__(self, "partitions", MappingProxyType(parts))

    def __eq__(self, other):
        return isinstance(other, PartitionMatroid) and dict(self.partitions) == dict(other.partitions)

    def __hash__(self):
        return hash(tuple(self.partitions.items()))

    @classmethod
    def from_items(cls, items: Iterable[ExpandedItem]) -> "PartitionMatroid":
        parts: dict[str, set] = {}
        for item in items:
            parts.setdefault(item.partition_id, set()).add(item.id)
        return cls(parts)

    def is_independent(self, ids: Iterable[str]) -> bool:
        ids = list(ids)
        if len(set(ids)) != len(ids):
            return False
        return all(len(members.intersection(ids)) <= 1 for members in self.partitions.values())


@dataclass(frozen=True, eq=False)
class Instance:
    """An expanded instance: items sorted by id, dense indices follow that order."""

    items: tuple[ExpandedItem, ...]
    matroid: PartitionMatroid
    budget: int
    reward_bound: int
    objective: Any = None
    objective_spec: Mapping | None = None
    name: str = "instance"

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(sorted(self.items, key=lambda it: it.id)))

    def __eq__(self, other):
        return (
            isinstance(other, Instance)
            and self.items == other.items
            and self.matroid == other.matroid
            and self.budget == other.budget
            and self.reward_bound == other.reward_bound
            and self.objective_spec == other.objective_spec
        )

    __hash__ = object.__hash__

    @property
    def n_items(self) -> int:
        return len(self.items)

    @cached_property
    def index(self) -> dict[str, int]:
        return {item.id: k for k, item in enumerate(self.items)}

    @cached_property
    def partition_ids(self) -> tuple[str, ...]:
        return tuple(self.matroid.partitions)

    @cached_property
    def partition_of(self) -> np.ndarray:
        """Dense partition index per item."""
        pidx = {p: k for k, p in enumerate(self.partition_ids)}
        return np.array([pidx[item.partition_id] for item in self.items], dtype=np.intp)

    @cached_property
    def caps(self) -> np.ndarray:
        return np.array([item.cap for item in self.items], dtype=np.int64)

    @cached_property
    def size_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Padded (sizes, cdf, rewards) arrays of shape (n_items, L).

        Padding repeats the last size with cdf 1 so inverse-cdf lookups never
        land on a padded column.
        """
        L = max(len(item.sizes.probs) for item in self.items)
        sizes = np.zeros((self.n_items, L), dtype=np.int64)
        cdf = np.ones((self.n_items, L))
        rewards = np.zeros((self.n_items, L), dtype=np.int64)
        for k, item in enumerate(self.items):
            ss = list(item.sizes.probs)
            ps = np.cumsum([item.sizes.probs[s] for s in ss])
            m = len(ss)
            sizes[k, :m] = ss
            sizes[k, m:] = ss[-1]
            cdf[k, : m - 1] = ps[: m - 1]
            rewards[k, :m] = [item.rewards(s) for s in ss]
            rewards[k, m:] = rewards[k, m - 1]
        return sizes, cdf, rewards

    @cached_property
    def reward_tables(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per item (reward values, probabilities), values ascending."""
        out = []
        for item in self.items:
            dist = reward_distribution(item)
            out.append((np.array(list(dist), dtype=np.int64), np.array(list(dist.values()))))
        return out

    @cached_property
    def reward_sampling_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded (reward values, cdf) arrays of shape (n_items, L) for inverse-cdf draws."""
        L = max(len(v) for v, _ in self.reward_tables)
        values = np.zeros((self.n_items, L), dtype=np.int64)
        cdf = np.ones((self.n_items, L))
        for k, (v, p) in enumerate(self.reward_tables):
            m = len(v)
            values[k, :m] = v
            values[k, m:] = v[-1]
            cdf[k, : m - 1] = np.cumsum(p)[: m - 1]
        return values, cdf

    def evaluate(self, rewards) -> float:
        return self.objective.evaluate(rewards)


def apply_size_cap(item: BaseItem, b: int, budget: int | None = None) -> ExpandedItem:
    """Pile all size mass at or above ``b`` onto ``b``; rewards restricted to [1, b]."""
    if b < 1:
        raise InstanceError(f"cap must be >= 1, got {b}")
    if budget is not None and b > budget:
        raise InstanceError(f"cap {b} exceeds budget {budget}")
    capped: dict[int, float] = {}
    for s, p in item.sizes.probs.items():
        key = min(s, b)
        capped[key] = capped.get(key, 0.0) + p
    sizes = SizeDistribution(capped)
    return ExpandedItem(
        id=cap_item_id(item.id, b, budget or b),
        base_id=item.id,
        cap=b,
        sizes=sizes,
        rewards=item.rewards.restrict(sizes.probs),
        partition_id=item.id,
    )


def cap_item_id(base_id: str, b: int, budget: int) -> str:
    return f"{base_id}@{b:0{len(str(budget))}d}"


def expand_with_caps(
    base_items: Iterable[BaseItem],
    budget: int,
    reward_bound: int,
    objective=None,
    name: str = "instance",
) -> Instance:
    """One capped copy per base item and cap in ``1..budget``, one partition per base item.

    ``objective`` is either a serializable spec ``{"family", "params"}`` keyed by
    base id (broadcast to every cap) or an already-built objective over the
    expanded items.
    """
    base_items = list(base_items)
    if budget < 1:
        raise InstanceError(f"budget must be >= 1, got {budget}")
    ids = [it.id for it in base_items]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise InstanceError(f"duplicate base ids: {dupes}")
    items = [apply_size_cap(it, b, budget) for it in base_items for b in range(1, budget + 1)]
    return _assemble(items, budget, reward_bound, objective, name)


def _assemble(items, budget, reward_bound, objective, name) -> Instance:
    from .objective import ObjectiveFunction, build_objective

    items = tuple(sorted(items, key=lambda it: it.id))
    spec = None
    if objective is None:
        objective = {"family": "additive", "params": {}}
    if isinstance(objective, ObjectiveFunction):
        bound = objective
    else:
        spec = {"family": objective["family"], "params": dict(objective.get("params", {}))}
        bound = build_objective(spec, [it.base_id for it in items])
    return Instance(
        items=items,
        matroid=PartitionMatroid.from_items(items),
        budget=int(budget),
        reward_bound=int(reward_bound),
        objective=bound,
        objective_spec=spec,
        name=name,
    )


def spot_reduce(
    jobs: Mapping[str, Mapping[str, Mapping[int, int]]],
    spot_instances: Mapping[str, Mapping[int, float]],
    budget: int,
    reward_bound: int | None = None,
    objective=None,
    name: str = "spot",
) -> Instance:
    """Reduce spot-instance scheduling to a capped knapsack instance.

    ``jobs[j][i]`` is the progress curve of job ``j`` on spot instance ``i``
    (dollars spent -> completed epochs) and ``spot_instances[i]`` the
    distribution of dollars spent before interruption. Item ``(j, i, b)``
    belongs to partition ``i``: one job, with one cap, per instance. The
    objective is keyed by job id.
    """
    if not jobs or not spot_instances:
        raise InstanceError("spot reduction needs at least one job and one instance")
    if budget < 1:
        raise InstanceError(f"budget must be >= 1, got {budget}")
    items = []
    for job, curves in jobs.items():
        for inst, interruption in spot_instances.items():
            curve = RewardCurve(curves.get(inst, {}))
            bad = curve.decreasing_pairs()
            if bad:
                raise InstanceError(f"progress curve of job {job!r} on {inst!r} decreases at sizes {bad}")
            base = BaseItem(f"{job}|{inst}", SizeDistribution(interruption), curve)
            for b in range(1, budget + 1):
                capped = apply_size_cap(base, b, budget)
                items.append(
                    ExpandedItem(
                        id=cap_item_id(base.id, b, budget),
                        base_id=str(job),
                        cap=b,
                        sizes=capped.sizes,
                        rewards=capped.rewards,
                        partition_id=str(inst),
                    )
                )
    if reward_bound is None:
        reward_bound = max([1] + [v for it in items for v in it.rewards.values.values()])
    return _assemble(items, budget, reward_bound, objective, name)


def reward_distribution(item: ExpandedItem | BaseItem) -> dict[int, float]:
    """q(j) = sum of p(s) over sizes s with R(s) = j, keyed by ascending reward."""
    out: dict[int, float] = {}
    for s, p in item.sizes.probs.items():
        r = item.rewards(s)
        out[r] = out.get(r, 0.0) + p
    return dict(sorted(out.items()))


def validate_instance(instance: Instance) -> list[str]:
    """Every broken invariant as a readable line; empty for a valid instance."""
    out: list[str] = []
    B, M = instance.budget, instance.reward_bound
    if B < 1:
        out.append(f"budget {B} must be >= 1")
    if M < 1:
        out.append(f"reward_bound {M} must be >= 1")
    seen = set()
    for item in instance.items:
        where = f"item {item.id!r}"
        if item.id in seen:
            out.append(f"{where}: duplicate id")
        seen.add(item.id)
        if not 1 <= item.cap <= B:
            out.append(f"{where}: cap {item.cap} outside [1, {B}]")
        out.extend(f"{where}: {msg}" for msg in item.sizes.violations(max_size=item.cap))
        for a, b in item.rewards.decreasing_pairs():
            out.append(
                f"{where}: reward decreases between sizes {a} and {b} "
                f"({item.rewards.values[a]} > {item.rewards.values[b]})"
            )
        for s in item.sizes.probs:
            if s not in item.rewards.values:
                out.append(f"{where}: no reward declared for size {s}")
        for s, r in item.rewards.values.items():
            if not 0 <= r <= M:
                out.append(f"{where}: reward {r} at size {s} outside [0, {M}]")
    ids = {item.id for item in instance.items}
    covered: set = set()
    for pid, members in instance.matroid.partitions.items():
        overlap = covered & members
        if overlap:
            out.append(f"partition {pid!r}: overlaps another partition on {sorted(overlap)}")
        covered |= members
    if covered != ids:
        missing, extra = sorted(ids - covered), sorted(covered - ids)
        if missing:
            out.append(f"matroid does not cover items {missing}")
        if extra:
            out.append(f"matroid names unknown items {extra}")
    for item in instance.items:
        pid = item.partition_id
        if pid not in instance.matroid.partitions or item.id not in instance.matroid.partitions[pid]:
            out.append(f"item {item.id!r}: not in its declared partition {pid!r}")
    if instance.objective is not None:
        n = getattr(instance.objective, "n", None)
        if n is not None and n != instance.n_items:
            out.append(f"objective covers {n} coordinates, instance has {instance.n_items} items")
        out.extend(f"objective: {msg}" for msg in getattr(instance.objective, "violations", lambda: [])())
    return out
