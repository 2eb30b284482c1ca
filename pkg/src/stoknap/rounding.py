"""Independent pair sampling followed by phantom-item pruning.

Every (item, slot) pair is proposed independently with probability equal to
its start mass in the fractional solution. Proposals are processed by slot,
ties broken uniformly at random. A proposal becomes *real* if its slot is
free and nothing earlier touched its partition; otherwise it is a *phantom*.
Real or phantom, its size is drawn and slots ``t .. t+size-1`` are marked
unavailable.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

SAMPLE_TOL = 1e-9

NOT_SAMPLED, REAL, SLOT, PARTITION, DUPLICATE = 0, 1, 2, 3, 4
CAUSES = {SLOT: "slot_unavailable", PARTITION: "partition_used", DUPLICATE: "duplicate_item"}


class Proposal(NamedTuple):
    item: int
    t: int


def _start_probabilities(solution) -> np.ndarray:
    xs = solution.x_start
    if np.any(xs > 1 + SAMPLE_TOL):
        i, t = np.argwhere(xs > 1 + SAMPLE_TOL)[0]
        raise ValueError(f"start mass {xs[i, t]:.6g} of item {i} at slot {t + 1} exceeds 1")
    return np.clip(xs, 0.0, 1.0)


def candidate_pairs(solution) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(item, slot, probability) for every pair with positive start mass, item-major."""
    p = _start_probabilities(solution)
    items, cols = np.nonzero(p > 0)
    return items.astype(np.intp), (cols + 1).astype(np.int64), p[items, cols]


def sample_proposals(solution, seed=None) -> list[Proposal]:
    """Include each pair (i, t) independently with probability x_start[i, t]."""
    items, ts, probs = candidate_pairs(solution)
    rng = np.random.default_rng(seed)
    keep = rng.random(len(probs)) < probs
    return [Proposal(int(i), int(t)) for i, t in zip(items[keep], ts[keep])]


def order_proposals(proposals: Sequence[Proposal], seed=None) -> list[Proposal]:
    """Sort by slot; equal slots in uniformly random order."""
    rng = np.random.default_rng(seed)
    keys = rng.random(len(proposals))
    order = sorted(range(len(proposals)), key=lambda k: (proposals[k].t, keys[k]))
    return [proposals[k] for k in order]


def draw_size(instance, item: int, u: float) -> int:
    sizes, cdf, _ = instance.size_table
    return int(sizes[item, int(np.count_nonzero(cdf[item] <= u))])


@dataclass
class TraceEntry:
    item_id: str
    t: int
    status: str  # "real" | "phantom"
    cause: str  # "" for real proposals
    size: int
    reward: int
    blocker: str = ""


@dataclass
class ExecutionTrace:
    entries: list
    unavailable: list
    rewards: np.ndarray
    value: float = float("nan")

    def rows(self) -> list[dict]:
        return [
            {"proposal": k, "item": e.item_id, "t": e.t, "status": e.status, "cause": e.cause,
             "blocker": e.blocker, "size": e.size, "reward": e.reward}
            for k, e in enumerate(self.entries)
        ]

    def violations(self, instance) -> list[str]:
        """Feasibility problems of the real schedule (matroid, overlaps, horizon)."""
        out = []
        real = [e for e in self.entries if e.status == "real"]
        ids = [e.item_id for e in real]
        if not instance.matroid.is_independent(ids):
            out.append(f"real items {ids} are not independent in the matroid")
        busy = np.zeros(instance.budget + 2, dtype=int)
        for e in real:
            if e.t + e.size - 1 > instance.budget:
                out.append(f"{e.item_id} at {e.t} with size {e.size} runs past the budget")
            busy[e.t : min(e.t + e.size, instance.budget + 1)] += 1
        if np.any(busy > 1):
            out.append(f"overlapping real spans at slots {np.flatnonzero(busy > 1).tolist()}")
        if sum(e.size for e in real) > instance.budget:
            out.append("total real size exceeds the budget")
        for e in self.entries:
            if e.status == "phantom" and not e.cause:
                out.append(f"phantom {e.item_id}@{e.t} has no recorded cause")
        return out


def execute(ordered: Sequence[Proposal], instance, seed=None, sizes: Sequence[int] | None = None) -> ExecutionTrace:
    """Process proposals in order, marking real/phantom and blocked slots.

    Sizes are drawn one per proposal in processing order from ``seed`` (the
    draw happens whether the proposal is real or phantom) unless ``sizes``
    gives them explicitly.
    """
    rng = np.random.default_rng(seed)
    B = instance.budget
    free = np.ones(B + 1, dtype=bool)  # index 0 unused
    owner = [""] * (B + 1)
    partition_owner: dict[str, str] = {}
    seen_items: set[int] = set()
    rewards = np.zeros(instance.n_items, dtype=np.int64)
    entries = []
    for k, (i, t) in enumerate(ordered):
        item = instance.items[i]
        size = int(sizes[k]) if sizes is not None else draw_size(instance, i, rng.random())
        slot_ok = free[t]
        part_ok = item.partition_id not in partition_owner
        if slot_ok and part_ok:
            status, cause, blocker = "real", "", ""
            rewards[i] = item.rewards(size)
        else:
            status = "phantom"
            if not slot_ok:
                cause, blocker = CAUSES[SLOT], owner[t]
            elif i in seen_items:
                cause, blocker = CAUSES[DUPLICATE], partition_owner[item.partition_id]
            else:
                cause, blocker = CAUSES[PARTITION], partition_owner[item.partition_id]
        label = f"{item.id}@{t}"
        for slot in range(t, min(t + size, B + 1)):
            if free[slot]:
                free[slot] = False
                owner[slot] = label
        partition_owner.setdefault(item.partition_id, label)
        seen_items.add(i)
        entries.append(TraceEntry(item.id, int(t), status, cause, size, int(rewards[i]) if status == "real" else 0, blocker))
    unavailable = [s for s in range(1, B + 1) if not free[s]]
    return ExecutionTrace(entries, unavailable, rewards)


def run_policy_once(instance, solution, seed=None):
    """One run of the rounding policy: (reward vector, objective value, trace)."""
    s_sample, s_order, s_size = np.random.SeedSequence(seed).spawn(3)
    proposals = sample_proposals(solution, s_sample)
    ordered = order_proposals(proposals, s_order)
    trace = execute(ordered, instance, s_size)
    trace.value = float(instance.objective.evaluate(trace.rewards))
    return trace.rewards, trace.value, trace


# -- vectorized batches -------------------------------------------------------

@dataclass
class Batch:
    """Draws and outcomes of R independent runs over P candidate pairs."""

    pair_item: np.ndarray  # (P,)
    pair_t: np.ndarray  # (P,)
    sampled: np.ndarray  # (R, P) bool
    keys: np.ndarray  # (R, P) tie-break keys
    sizes: np.ndarray  # (R, P)
    size_rewards: np.ndarray  # (R, P) reward the draw would earn if real
    status: np.ndarray = None  # (R, P) cause codes
    rewards: np.ndarray = None  # (R, n_items)
    values: np.ndarray = None  # (R,)

    @property
    def runs(self) -> int:
        return self.sampled.shape[0]

    @property
    def real(self) -> np.ndarray:
        return self.status == REAL

    @property
    def phantom(self) -> np.ndarray:
        return self.status >= SLOT


def draw_batch(instance, pair_item, pair_t, probs, runs: int, rng, size_profile=None) -> Batch:
    """Pre-draw proposal indicators, tie keys and sizes for every pair of every run.

    With ``size_profile`` (one size per item, 0 = item absent) sizes are fixed
    instead of drawn.
    """
    P = len(pair_item)
    sampled = rng.random((runs, P)) < probs[None, :]
    keys = rng.random((runs, P))
    u = rng.random((runs, P))
    sizes_tab, cdf, rew_tab = instance.size_table
    if size_profile is None:
        col = (u[:, :, None] >= cdf[pair_item][None, :, :]).sum(axis=2)
        sizes = sizes_tab[pair_item[None, :], col]
        size_rewards = rew_tab[pair_item[None, :], col]
    else:
        profile = np.asarray(size_profile, dtype=np.int64)
        sizes = np.broadcast_to(profile[pair_item], (runs, P)).copy()
        sampled &= (profile[pair_item] > 0)[None, :]
        size_rewards = np.zeros((runs, P), dtype=np.int64)
        for c, i in enumerate(pair_item):
            size_rewards[:, c] = instance.items[i].rewards(int(max(profile[i], 1)))
    return Batch(pair_item, pair_t, sampled, keys, sizes, size_rewards)


def execute_batch(instance, batch: Batch, evaluate: bool = True) -> Batch:
    """Sequential pruning pass, vectorized across runs."""
    R, P = batch.sampled.shape
    part = instance.partition_of[batch.pair_item]
    rows = np.arange(R)
    max_end = np.zeros(R, dtype=np.int64)
    part_used = np.zeros((R, len(instance.partition_ids)), dtype=bool)
    item_used = np.zeros((R, instance.n_items), dtype=bool)
    status = np.zeros((R, P), dtype=np.int8)
    for t in range(1, instance.budget + 1):
        cols = np.flatnonzero(batch.pair_t == t)
        if len(cols) == 0:
            continue
        order = cols[np.argsort(batch.keys[:, cols], axis=1)] if len(cols) > 1 else np.broadcast_to(cols, (R, 1))
        for k in range(order.shape[1]):
            c = order[:, k]
            smp = batch.sampled[rows, c]
            avail = max_end < t
            pc, ic = part[c], batch.pair_item[c]
            p_used = part_used[rows, pc]
            code = np.where(avail & ~p_used, REAL, np.where(~avail, SLOT, np.where(item_used[rows, ic], DUPLICATE, PARTITION)))
            status[rows, c] = np.where(smp, code, NOT_SAMPLED)
            max_end = np.where(smp, np.maximum(max_end, t + batch.sizes[rows, c] - 1), max_end)
            part_used[rows, pc] |= smp
            item_used[rows, ic] |= smp
    batch.status = status
    onehot = np.zeros((P, instance.n_items))
    onehot[np.arange(P), batch.pair_item] = 1.0
    batch.rewards = np.rint(np.where(status == REAL, batch.size_rewards, 0) @ onehot).astype(np.int64)
    if evaluate:
        batch.values = instance.objective.evaluate_batch(batch.rewards)
    return batch


def batch_violations(instance, batch: Batch) -> dict[str, int]:
    """Count runs whose real schedule breaks the matroid, overlaps, or overruns B.

    Recomputed from the real flags alone, independently of the pruning pass.
    """
    real = batch.real
    B = instance.budget
    part = instance.partition_of[batch.pair_item]
    per_part = np.zeros((batch.runs, len(instance.partition_ids)), dtype=np.int64)
    for c in range(len(part)):
        per_part[:, part[c]] += real[:, c]
    ends = batch.pair_t[None, :] + batch.sizes - 1
    overlap = np.zeros(batch.runs, dtype=bool)
    for slot in range(1, B + 1):
        cover = real & (batch.pair_t[None, :] <= slot) & (ends >= slot)
        overlap |= cover.sum(axis=1) > 1
    overrun = np.any(real & (ends > B), axis=1)
    total = np.where(real, batch.sizes, 0).sum(axis=1)
    return {
        "matroid": int(np.count_nonzero(per_part.max(axis=1, initial=0) > 1)),
        "overlap": int(np.count_nonzero(overlap)),
        "overrun": int(np.count_nonzero(overrun)),
        "total_size": int(np.count_nonzero(total > B)),
    }


CHUNK_RUNS = 20_000


def simulate_batches(
    instance,
    solution,
    runs: int,
    seed=None,
    chunk_runs: int = CHUNK_RUNS,
    size_profile=None,
    evaluate: bool = True,
    threads: int = 1,
) -> Iterator[Batch]:
    """Yield executed batches covering ``runs`` runs.

    Chunk ``k`` always uses the ``k``-th child of ``seed``, so output does not
    depend on ``threads``.
    """
    items, ts, probs = candidate_pairs(solution)
    n_chunks = max(1, -(-runs // chunk_runs))
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [min(chunk_runs, runs - k * chunk_runs) for k in range(n_chunks)]

    def one(k):
        rng = np.random.default_rng(children[k])
        batch = draw_batch(instance, items, ts, probs, sizes[k], rng, size_profile)
        return execute_batch(instance, batch, evaluate=evaluate)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield from pool.map(one, range(n_chunks))
    else:
        for k in range(n_chunks):
            yield one(k)
