"""Time-indexed relaxation over per-item Markov arms.

Each item is an arm with a start node and forced-pull nodes ``Mid(k, s)``:
one pull at the start node reveals the size ``s``, the next ``s - 1`` pulls
walk ``Mid(1, s) .. Mid(s-1, s)``, so an item of size ``s`` started at slot
``t`` occupies slots ``t .. t+s-1``. Terminal nodes carry no variables.

For every node ``u`` and slot ``t in 1..B`` there is a pull variable
``x[u, t]`` and a state variable ``s[u, t]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

logger = logging.getLogger(__name__)

LP_TOL = 1e-9


class LPError(RuntimeError):
    """The LP solver failed; for a well-formed system this signals a construction bug."""


class Node(NamedTuple):
    item: int
    kind: str  # "start" | "mid"
    k: int = 0
    size: int = 0

    def label(self, instance) -> str:
        item_id = instance.items[self.item].id
        if self.kind == "start":
            return f"start[{item_id}]"
        return f"mid[{item_id},{self.k},{self.size}]"


def build_nodes(instance) -> list[Node]:
    """Start node plus ``Mid(k, s)`` for ``k = 1..s-1`` per support size, in canonical order."""
    nodes = []
    for i, item in enumerate(instance.items):
        nodes.append(Node(i, "start"))
        mids = [Node(i, "mid", k, s) for s in item.sizes.support for k in range(1, s)]
        nodes.extend(sorted(mids, key=lambda u: (u.k, u.size)))
    return nodes


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    """Sparse rows ``A_ub v <= b_ub`` and ``A_eq v = b_eq`` over ``v = (x, s)``, with ``v >= 0``."""

    instance: object
    nodes: tuple
    A_ub: sparse.csr_matrix
    b_ub: np.ndarray
    ub_labels: tuple
    A_eq: sparse.csr_matrix
    b_eq: np.ndarray
    eq_labels: tuple

    @property
    def budget(self) -> int:
        return self.instance.budget

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_vars(self) -> int:
        return 2 * self.n_nodes * self.budget

    def x_index(self, node: int, t: int) -> int:
        return node * self.budget + (t - 1)

    def s_index(self, node: int, t: int) -> int:
        return (self.n_nodes + node) * self.budget + (t - 1)

    @cached_property
    def start_nodes(self) -> np.ndarray:
        """Node index of each item's start node."""
        out = np.empty(self.instance.n_items, dtype=np.intp)
        for a, u in enumerate(self.nodes):
            if u.kind == "start":
                out[u.item] = a
        return out

    @cached_property
    def xbar_matrix(self) -> sparse.csr_matrix:
        """Linear map v -> xbar (sum over slots of start pulls)."""
        B = self.budget
        rows, cols = [], []
        for i, a in enumerate(self.start_nodes):
            for t in range(1, B + 1):
                rows.append(i)
                cols.append(self.x_index(a, t))
        data = np.ones(len(rows))
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.instance.n_items, self.n_vars))

    def var_label(self, j: int) -> str:
        B = self.budget
        role, rest = ("x", j) if j < self.n_nodes * B else ("s", j - self.n_nodes * B)
        node, t = divmod(rest, B)
        return f"{role}_{self.nodes[node].label(self.instance)}_{t + 1}"


class _Rows:
    def __init__(self):
        self.rows, self.cols, self.data, self.rhs, self.labels = [], [], [], [], []

    def add(self, coeffs: dict, rhs: float, label: str):
        r = len(self.rhs)
        for c, v in coeffs.items():
            self.rows.append(r)
            self.cols.append(c)
            self.data.append(v)
        self.rhs.append(rhs)
        self.labels.append(label)

    def matrix(self, n_vars):
        A = sparse.csr_matrix((self.data, (self.rows, self.cols)), shape=(len(self.rhs), n_vars))
        return A, np.array(self.rhs, dtype=float), tuple(self.labels)


def build_constraints(instance) -> ConstraintSystem:
    """Emit the pull/state coupling, slot capacity, partition, initial-state,
    transition and start-fit rows for ``instance``."""
    nodes = build_nodes(instance)
    B = instance.budget
    N = len(nodes)
    n_vars = 2 * N * B
    X = lambda a, t: a * B + (t - 1)  # noqa: E731
    S = lambda a, t: (N + a) * B + (t - 1)  # noqa: E731
    ub, eq = _Rows(), _Rows()
    start_of = {u.item: a for a, u in enumerate(nodes) if u.kind == "start"}
    node_of = {(u.item, u.k, u.size): a for a, u in enumerate(nodes) if u.kind == "mid"}
    labels = [u.label(instance) for u in nodes]

    for a, u in enumerate(nodes):
        for t in range(1, B + 1):
            if u.kind == "start":
                ub.add({X(a, t): 1.0, S(a, t): -1.0}, 0.0, f"pull<=state[{labels[a]},{t}]")
            else:
                eq.add({X(a, t): 1.0, S(a, t): -1.0}, 0.0, f"forced[{labels[a]},{t}]")
    for t in range(1, B + 1):
        ub.add({X(a, t): 1.0 for a in range(N)}, 1.0, f"capacity[{t}]")
    for pid, members in instance.matroid.partitions.items():
        ub.add({S(start_of[instance.index[m]], 1): 1.0 for m in members}, 1.0, f"partition[{pid}]")
    for a, u in enumerate(nodes):
        if u.kind == "mid":
            eq.add({S(a, 1): 1.0}, 0.0, f"init[{labels[a]}]")
    for i, a in start_of.items():
        for t in range(2, B + 1):
            eq.add({S(a, t): 1.0, S(a, t - 1): -1.0, X(a, t - 1): 1.0}, 0.0, f"start_flow[{labels[a]},{t}]")
    for a, u in enumerate(nodes):
        if u.kind != "mid":
            continue
        for t in range(2, B + 1):
            if u.k == 1:
                p = instance.items[u.item].sizes.pmf(u.size)
                eq.add({S(a, t): 1.0, X(start_of[u.item], t - 1): -p}, 0.0, f"mid_flow[{labels[a]},{t}]")
            else:
                prev = node_of[(u.item, u.k - 1, u.size)]
                eq.add({S(a, t): 1.0, X(prev, t - 1): -1.0}, 0.0, f"mid_flow[{labels[a]},{t}]")
    for i, a in start_of.items():
        cap = instance.items[i].cap
        for t in range(1, B + 1):
            if t + cap - 1 > B:
                eq.add({X(a, t): 1.0}, 0.0, f"start_fit[{labels[a]},{t}]")

    A_ub, b_ub, ub_labels = ub.matrix(n_vars)
    A_eq, b_eq, eq_labels = eq.matrix(n_vars)
    return ConstraintSystem(instance, tuple(nodes), A_ub, b_ub, ub_labels, A_eq, b_eq, eq_labels)


@dataclass(eq=False)
class FractionalSolution:
    """A point ``v = (x, s)`` of a constraint system (or a scaled multiple of one)."""

    system: ConstraintSystem
    values: np.ndarray
    tol: float = LP_TOL
    meta: dict = field(default_factory=dict)

    @property
    def instance(self):
        return self.system.instance

    @property
    def x(self) -> np.ndarray:
        """Pull values, shape (n_nodes, B)."""
        N, B = self.system.n_nodes, self.system.budget
        return self.values[: N * B].reshape(N, B)

    @property
    def s(self) -> np.ndarray:
        """State values, shape (n_nodes, B)."""
        N, B = self.system.n_nodes, self.system.budget
        return self.values[N * B :].reshape(N, B)

    @property
    def x_start(self) -> np.ndarray:
        """Start pulls per item and slot, shape (n_items, B); column t-1 is slot t."""
        return self.x[self.system.start_nodes]

    @property
    def xbar(self) -> np.ndarray:
        return inclusion_probability(self)

    def scaled(self, factor: float) -> "FractionalSolution":
        return FractionalSolution(self.system, self.values * factor, self.tol, dict(self.meta))

    @classmethod
    def zeros(cls, system: ConstraintSystem) -> "FractionalSolution":
        return cls(system, np.zeros(system.n_vars))

    @classmethod
    def from_start_pulls(cls, system: ConstraintSystem, x_start) -> "FractionalSolution":
        """Complete a solution from start pulls by propagating the transition rows.

        The initial start state is set to the total start mass, which is the
        smallest value satisfying the pull/state coupling.
        """
        x_start = np.asarray(x_start, dtype=float)
        inst = system.instance
        B, N = system.budget, system.n_nodes
        x = np.zeros((N, B))
        s = np.zeros((N, B))
        for i, a in enumerate(system.start_nodes):
            x[a] = x_start[i]
            s[a, 0] = x_start[i].sum()
            for t in range(1, B):
                s[a, t] = s[a, t - 1] - x[a, t - 1]
        for a, u in enumerate(system.nodes):
            if u.kind != "mid":
                continue
            p = inst.items[u.item].sizes.pmf(u.size)
            start = x_start[u.item]
            # Mid(k, s) at slot t comes from a start at slot t - k
            for t in range(u.k + 1, B + 1):
                s[a, t - 1] = start[t - u.k - 1] * p
            x[a] = s[a]
        return cls(system, np.concatenate([x.ravel(), s.ravel()]))


def inclusion_probability(solution: FractionalSolution) -> np.ndarray:
    """xbar(i) = total start mass of item i over all slots."""
    return np.asarray(solution.system.xbar_matrix @ solution.values).ravel()


def solve_weighted(system: ConstraintSystem, weights) -> FractionalSolution:
    """Maximize sum_i w_i xbar(i) over the system with HiGHS."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (system.instance.n_items,) or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be a finite nonnegative vector with one entry per item")
    if not np.any(w > 0):
        sol = FractionalSolution.zeros(system)
        sol.meta["objective"] = 0.0
        return sol
    c = -np.asarray(system.xbar_matrix.T @ w).ravel()
    res = linprog(
        c,
        A_ub=system.A_ub,
        b_ub=system.b_ub,
        A_eq=system.A_eq,
        b_eq=system.b_eq,
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": LP_TOL, "dual_feasibility_tolerance": LP_TOL},
    )
    if res.status != 0:
        raise LPError(f"LP solve failed (status {res.status}): {res.message}")
    v = np.asarray(res.x, dtype=float)
    v[(v < 0) & (v >= -LP_TOL)] = 0.0
    return FractionalSolution(system, v, LP_TOL, {"objective": float(-res.fun)})


def check_feasibility(solution: FractionalSolution, system: ConstraintSystem | None = None, tol: float = 1e-6):
    """Violated rows as (label, amount) with amount > tol; empty iff feasible."""
    system = system or solution.system
    v = solution.values
    if v.shape != (system.n_vars,):
        raise ValueError(f"solution has {v.shape[0]} values, system has {system.n_vars} variables")
    out = []
    lhs = system.A_ub @ v - system.b_ub
    for r in np.flatnonzero(lhs > tol):
        out.append((system.ub_labels[r], float(lhs[r])))
    resid = system.A_eq @ v - system.b_eq
    for r in np.flatnonzero(np.abs(resid) > tol):
        out.append((system.eq_labels[r], float(abs(resid[r]))))
    for j in np.flatnonzero(v < -tol):
        out.append((f"nonneg[{system.var_label(j)}]", float(-v[j])))
    return out


def write_lp(system: ConstraintSystem, weights, path_or_file) -> None:
    """Dump ``max sum_i w_i xbar(i)`` over the system in CPLEX LP text format."""
    w = np.asarray(weights, dtype=float)
    c = np.asarray(system.xbar_matrix.T @ w).ravel()
    names = [_lp_name(system.var_label(j)) for j in range(system.n_vars)]

    def expr(coefs):
        terms = [f"{'-' if v < 0 else '+'} {abs(v):.17g} {names[j]}" for j, v in coefs]
        return " ".join(terms) if terms else "0 " + names[0]

    lines = ["\\ stochastic knapsack relaxation", "Maximize", " obj: " + expr((j, c[j]) for j in np.flatnonzero(c))]
    lines.append("Subject To")
    for A, b, labels, sense in ((system.A_ub, system.b_ub, system.ub_labels, "<="), (system.A_eq, system.b_eq, system.eq_labels, "=")):
        A = A.tocsr()
        for r in range(A.shape[0]):
            row = A.getrow(r)
            lines.append(f" {_lp_name(labels[r])}: {expr(zip(row.indices, row.data))} {sense} {b[r]:.17g}")
    lines.append("Bounds")
    lines.extend(f" {nm} >= 0" for nm in names)
    lines.append("End")
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(text)


def _lp_name(label: str) -> str:
    out = "".join(ch if ch.isalnum() or ch in "_." else "_" for ch in label)
    return out if not out[0].isdigit() else "v" + out
