"""``stoknap`` command line: gen, solve, simulate, verify, trace."""
from __future__ import annotations

import argparse
import io as _io
import json
import logging
import math
import os
import sys

import numpy as np

from . import generate
from .cgreedy import GreedyConfig, continuous_greedy, greedy_quality_report
from .io import dumps, instance_to_dict, read_instance, read_solution, solution_to_dict, write_csv
from .model import InstanceError, validate_instance
from .objective import EnumerationGuardError, check_monotone_lattice_submodular, multilinear_estimate, multilinear_exact
from .polytope import build_constraints, check_feasibility, write_lp
from .rounding import run_policy_once
from .verify import (
    APPROX_RATIO,
    Z,
    GuardExceeded,
    VerificationReport,
    crs_drop_rate,
    end_to_end_ratio,
    multilinear_value,
    simulate_favg,
    survival_closed_form,
    survival_monte_carlo,
)

EXIT_OK, EXIT_INPUT, EXIT_VERIFY = 0, 1, 2
SUITES = ("crs", "mono", "polytope", "multilinear", "dp-ratio")


class UsageError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("STOKNAP_SEED")
    if env is None:
        raise UsageError("a seed is required: pass --seed or set STOKNAP_SEED")
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"STOKNAP_SEED must be an integer, got {env!r}") from None


def _positive(name):
    def conv(v):
        n = int(v)
        if n < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1")
        return n
    return conv


def _load(path):
    inst = read_instance(path)
    problems = validate_instance(inst)
    if problems:
        raise InstanceError("\n".join(f"{path}: {p}" for p in problems))
    return inst


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="")


def _emit(text, path):
    fh = _open_out(path)
    try:
        fh.write(text)
    finally:
        if fh is not sys.stdout:
            fh.close()


def _config(args, seed) -> GreedyConfig:
    return GreedyConfig(stopping_time=args.b, step=args.delta, n_samples=args.samples, seed=seed,
                        exact_marginals=args.exact_marginals)


# -- commands ----------------------------------------------------------------

def cmd_gen(args):
    seed = _seed(args)
    if args.family == "random":
        data = generate.random_catalog(args.n, args.budget, args.M, seed, objective=args.objective)
    else:
        inst = generate.spot_instance(args.jobs, args.instances, args.budget, args.M, seed, objective=args.objective)
        data = instance_to_dict(inst)
    _emit(dumps(data), args.output)
    return EXIT_OK


def cmd_solve(args):
    seed = _seed(args)
    inst = _load(args.instance)
    system = build_constraints(inst)
    sol = continuous_greedy(inst, system, _config(args, seed))
    _emit(dumps(solution_to_dict(sol, include_mid=args.include_mid)), args.output)
    if args.lp_out:
        w = np.ones(inst.n_items)
        write_lp(system, w, args.lp_out)
    if args.trace_out:
        # tidy long format: iteration, quantity, value
        rows = [
            {"iteration": r["iteration"], "quantity": k, "value": r[k]}
            for r in sol.meta["trace"] for k in ("weight_norm", "objective_estimate", "objective_stderr")
        ]
        with open(args.trace_out, "w", newline="") as fh:
            write_csv(rows, ["iteration", "quantity", "value"], fh)
    report = greedy_quality_report(inst, sol, opt_value=args.opt, seed=seed)
    report["feasible_scaled"] = not check_feasibility(sol.scaled(1.0 / sol.meta["stopping_time"]))
    print(json.dumps(report, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args):
    seed = _seed(args)
    inst = _load(args.instance)
    system = build_constraints(inst)
    sol = read_solution(args.solution, system)
    stats = {}
    favg, err = simulate_favg(inst, sol, args.runs, seed, stats=stats, threads=args.threads)
    F, F_err, exact = multilinear_value(inst, sol.xbar, seed=seed)
    sigma = math.hypot(err, F_err / 2)
    threshold = F / 2 - Z * sigma
    violations = sum(v for k, v in stats.items() if k != "runs")
    ok = favg >= threshold and violations == 0
    row = {"instance": inst.name, "runs": args.runs, "seed": seed, "favg": favg, "favg_stderr": err,
           "F": F, "F_stderr": F_err, "F_exact": exact, "threshold": threshold, "violations": violations,
           "verdict": "pass" if ok else "fail"}
    buf = _io.StringIO()
    write_csv([row], list(row), buf)
    _emit(buf.getvalue(), args.output)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_trace(args):
    seed = _seed(args)
    inst = _load(args.instance)
    sol = read_solution(args.solution, build_constraints(inst))
    _, value, trace = run_policy_once(inst, sol, seed)
    buf = _io.StringIO()
    write_csv(trace.rows(), ["proposal", "item", "t", "status", "cause", "blocker", "size", "reward"], buf)
    _emit(buf.getvalue(), args.output)
    print(json.dumps({"value": value, "unavailable": trace.unavailable, "violations": trace.violations(inst)}),
          file=sys.stderr)
    return EXIT_OK


def _suite_crs(rep, inst, sol, args, seed):
    for r in crs_drop_rate(inst, sol, args.runs, seed, threads=args.threads):
        thr = 0.5 + Z * r["stderr"]
        rep.add(f"crs[{r['item']} t={r['t']}]", inst.name, r["rate"], r["stderr"], thr, r["rate"] <= thr)


def _suite_mono(rep, inst, sol, args, seed):
    rng = np.random.default_rng(seed)
    B = inst.budget
    active = np.flatnonzero(sol.xbar > 0)
    if len(active) == 0:
        return
    for k in range(args.pairs):
        i = int(rng.choice(active))
        u = rng.integers(0, B + 1, inst.n_items)
        v = np.minimum(u + rng.integers(0, B + 1, inst.n_items), B)
        u[i] = v[i] = max(1, int(u[i]))
        cu, cv = survival_closed_form(sol, u, i), survival_closed_form(sol, v, i)
        rep.add(f"mono_closed_form[{k}]", inst.name, cu - cv, 0.0, 0.0, cu >= cv)
        mu, eu = survival_monte_carlo(inst, sol, u, i, args.runs, [seed, k, 0])
        mv, ev = survival_monte_carlo(inst, sol, v, i, args.runs, [seed, k, 1])
        sigma = math.hypot(eu, ev)
        rep.add(f"mono_mc[{k}]", inst.name, mu - mv, sigma, -Z * sigma, mu >= mv - Z * sigma)


def _suite_polytope(rep, inst, sol, args, seed):
    b = sol.meta["stopping_time"]
    bad = check_feasibility(sol.scaled(1.0 / b), tol=1e-6)
    worst = max((amt for _, amt in bad), default=0.0)
    rep.add("polytope_scaled_feasible", inst.name, worst, 0.0, 1e-6, not bad)


def _suite_multilinear(rep, inst, sol, args, seed):
    f = inst.objective
    try:
        exact = multilinear_exact(f, sol.xbar, inst)
    except EnumerationGuardError as exc:
        raise UsageError(f"{inst.name}: {exc}") from None
    hits = 0
    for k in range(args.reps):
        m, e = multilinear_estimate(f, sol.xbar, inst, args.samples_check, [seed, k])
        hits += abs(m - exact) <= Z * e
    rep.add("multilinear_within_3sigma", inst.name, hits / args.reps, 0.0, 0.99, hits >= math.ceil(0.99 * args.reps))
    check = check_monotone_lattice_submodular(f, inst.n_items if inst.n_items <= 4 else None, inst.reward_bound,
                                              seed=seed)
    rep.add("objective_monotone_submodular", inst.name,
            float(len(check.monotone_violations) + len(check.submodular_violations)), 0.0, 0.0, check.ok)


def _suite_dp_ratio(rep, inst, sol, args, seed):
    stats = {}
    try:
        res = end_to_end_ratio(inst, _config(args, seed), args.runs, seed, stats=stats, threads=args.threads)
    except GuardExceeded as exc:
        raise UsageError(f"{inst.name}: {exc}") from None
    if res["ratio"] is None:
        rep.add("dp_ratio", inst.name, float("nan"), 0.0, APPROX_RATIO, True)
    else:
        thr = APPROX_RATIO - Z * res["ratio_stderr"]
        rep.add("dp_ratio", inst.name, res["ratio"], res["ratio_stderr"], thr, res["ratio"] >= thr)
    n_bad = sum(v for k, v in stats.items() if k != "runs")
    rep.add("execution_feasible", inst.name, float(n_bad), 0.0, 0.0, n_bad == 0)


SUITE_FUNCS = {"crs": _suite_crs, "mono": _suite_mono, "polytope": _suite_polytope,
               "multilinear": _suite_multilinear, "dp-ratio": _suite_dp_ratio}


def cmd_verify(args):
    seed = _seed(args)
    rep = VerificationReport()
    if args.solution and (len(args.instance) != 1 or args.suite == "dp-ratio"):
        raise UsageError("--solution needs exactly one instance and a suite other than dp-ratio")
    for path in args.instance:
        inst = _load(path)
        system = build_constraints(inst)
        if args.solution:
            sol = read_solution(args.solution, system)
        else:
            sol = continuous_greedy(inst, system, _config(args, seed))
        SUITE_FUNCS[args.suite](rep, inst, sol, args, seed)
    _emit(rep.to_csv(), args.output)
    return EXIT_OK if rep.passed else EXIT_VERIFY


# -- parser ------------------------------------------------------------------

def _add_greedy(p):
    p.add_argument("--b", type=float, default=0.5, help="stopping time in (0, 1]")
    p.add_argument("--delta", type=float, default=None, help="step size; must divide b")
    p.add_argument("--samples", type=_positive("samples"), default=2000, help="samples per marginal estimate")
    p.add_argument("--exact-marginals", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stoknap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--seed", type=int, default=None, help="defaults to $STOKNAP_SEED")
        p.add_argument("--threads", type=_positive("threads"), default=1)
        if out:
            p.add_argument("-o", "--output", default=None, help="output file (default stdout)")

    p = sub.add_parser("gen", help="write a generated instance file")
    p.add_argument("family", choices=("random", "spot"))
    p.add_argument("--n", type=int, default=3, help="base items (random family)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--budget", "-B", type=int, default=5)
    p.add_argument("--M", type=int, default=2, help="reward bound")
    p.add_argument("--objective", default="concave_of_sum",
                   choices=("additive", "concave_of_sum", "nested_coverage"))
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="run continuous greedy and write a solution file")
    p.add_argument("instance")
    _add_greedy(p)
    p.add_argument("--include-mid", action="store_true", help="also store the full (x, s) vector")
    p.add_argument("--lp-out", help="write the LP (unit weights) in CPLEX LP format")
    p.add_argument("--trace-out", help="per-iteration trace as long-format CSV")
    p.add_argument("--opt", type=float, default=None, help="known optimum for the quality report")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="Monte-Carlo f_avg of the rounding policy")
    p.add_argument("instance")
    p.add_argument("solution")
    p.add_argument("--runs", type=_positive("runs"), default=100_000)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", choices=SUITES)
    p.add_argument("instance", nargs="+")
    p.add_argument("--solution", help="check this solution file instead of solving")
    _add_greedy(p)
    p.add_argument("--runs", type=_positive("runs"), default=100_000)
    p.add_argument("--pairs", type=_positive("pairs"), default=10, help="profile pairs (mono)")
    p.add_argument("--reps", type=_positive("reps"), default=100, help="repetitions (multilinear)")
    p.add_argument("--samples-check", type=_positive("samples-check"), default=100_000)
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("trace", help="dump one execution of the rounding policy")
    p.add_argument("instance")
    p.add_argument("solution")
    common(p)
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InstanceError, UsageError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
