"""Command-line entry point.

Exit codes: 0 success, 2 infeasible (or an invalid plan), 3 timeout without a plan, 4 input error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

from ..csolve import emit_smtlib
from ..plan import Infeasible, Plan, Timeout, sites_hit
from ..planner import Budget, NoPlanError, PlanningInfeasible, StepRecord, run_iterative, shrinking_horizon_execute
from ..sampler import build_sampled_system
from ..scenario import ScenarioError, load_scenario, reference_path
from ..ts import UnsatisfiableClassError, classify_assignment
from ..tdo import TdoInstance, encode_tdo, lower_horizon
from .bench import load_config, read_rows, run_bench
from .oracle import optimal_oracle
from .planfile import PlanFileError, read_plan, write_plan
from .report import render_report, summary_text

OK, INFEASIBLE, TIMEOUT, INPUT_ERROR = 0, 2, 3, 4

log = logging.getLogger("iterplan")


def _scenario(arg: str):
    return load_scenario(reference_path() if arg == "reference" else arg)


def _emit_smt(path, scenario, x0, K: int) -> None:
    S = build_sampled_system(scenario, extra_states=[x0], time_origin=x0.time)
    spec = classify_assignment(S, scenario.assignment())
    inst = TdoInstance(S, spec, x0, max(K, 1))
    encode_tdo(inst)
    Path(path).write_text(emit_smtlib(inst.problem))


def _describe(plan: Plan, scenario) -> str:
    hit = sites_hit(plan.implementation, scenario.sites)
    return f"producer={plan.producer} objective={plan.objective:.3f}s sites_hit={len(hit)}/{len(scenario.sites)}"


def cmd_plan(args) -> int:
    sc = _scenario(args.scenario)
    x0 = sc.initial_state()
    budget = args.budget if args.budget is not None else sc.params.plan_budget
    horizon = (args.horizon_steps or sc.params.horizon_steps) * sc.params.gamma_d
    try:
        res = run_iterative(sc, sc.sites, x0, args.solvers.split(","), Budget(budget), horizon, args.seed)
    except PlanningInfeasible as exc:
        print(f"infeasible: {exc}")
        if args.emit_smt:
            _emit_smt(args.emit_smt, sc, x0, int(horizon // sc.params.gamma_d))
        return INFEASIBLE
    except NoPlanError as exc:
        print(f"timeout: {exc}")
        return TIMEOUT
    for r in res.runs:
        print(f"{r.solver}: objective={r.objective} elapsed={r.elapsed:.2f}s accepted={r.accepted} {r.note}".rstrip())
    print(_describe(res.plan, sc))
    if args.emit_smt:
        _emit_smt(args.emit_smt, sc, x0, res.plan.details.K)
    if args.out:
        write_plan(args.out, res.plan, sc)
    return OK


def cmd_execute(args) -> int:
    sc = _scenario(args.scenario)
    x0 = sc.initial_state()
    try:
        impl, elog = shrinking_horizon_execute(sc, sc.sites, x0, args.steps, args.step_budget, None, args.solvers.split(","), args.seed)
    except (PlanningInfeasible, NoPlanError) as exc:
        print(f"no initial plan: {exc}")
        return INFEASIBLE if isinstance(exc, PlanningInfeasible) else TIMEOUT
    for r in elog.records:
        print(f"step {r.step}: producer={r.producer} objective={r.objective_after:.1f}s delta_f={r.delta_f:.4f} retired={list(r.retired)} compute={r.compute_time:.2f}s")
    print(f"executed until t={impl.end_time:.1f}s; remaining sites: {list(elog.remaining)}")
    if args.log:
        cols = [f.name for f in fields(StepRecord)]
        with open(args.log, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in elog.records:
                d = asdict(r)
                d["retired"] = " ".join(map(str, r.retired))
                w.writerow(d)
    if args.out:
        write_plan(args.out, Plan(impl.trajectory(), impl, impl.end_time, "executed"), sc)
    return OK if elog.completed else INFEASIBLE


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    if args.workers:
        cfg = replace(cfg, workers=args.workers)
    out = Path(args.out)
    rows = run_bench(cfg, out)
    print(summary_text(rows), end="")
    if not args.no_report:
        for p in render_report(out):
            print(f"wrote {p}")
    return OK


def cmd_report(args) -> int:
    rows = read_rows(args.csv)
    print(summary_text(rows), end="")
    for p in render_report(args.csv, args.out_dir):
        print(f"wrote {p}")
    return OK


def cmd_oracle(args) -> int:
    sc = _scenario(args.scenario)
    x0 = sc.initial_state()
    S = build_sampled_system(sc, extra_states=[x0])
    spec = classify_assignment(S, sc.assignment())
    kmax = args.kmax or sc.params.horizon_steps
    print(f"lower bound K={lower_horizon(S, spec, x0)}")
    res = optimal_oracle(S, spec, x0, kmax, args.timeout, sc.sites, args.seed)
    if isinstance(res, Infeasible):
        print(f"infeasible: {res.reason}")
        return INFEASIBLE
    if isinstance(res, Timeout):
        print(f"timeout: {res.reason}; bound {res.best_bound}s")
        return TIMEOUT
    print(f"optimal K={res.details.K} " + _describe(res, sc))
    if args.out:
        write_plan(args.out, res, sc)
    return OK


def cmd_validate(args) -> int:
    sc = _scenario(args.scenario)
    pf = read_plan(args.plan)
    world = sc.world()
    impl = pf.implementation
    if len(pf.names) != len(sc.fleet):
        print(f"invalid: plan has {len(pf.names)} agents, scenario has {len(sc.fleet)}")
        return INFEASIBLE
    problems = []
    start = impl.start_state
    for j, (a, b) in enumerate(zip(start.vehicles, sc.initial_state().vehicles)):
        if a.position != b.position or abs(a.energy - b.energy) > 1e-6 or a.flag != b.flag:
            problems.append(f"agent {j} does not start from the scenario's initial state")
    traj = impl.trajectory()
    for k, (x, lab, y) in enumerate(traj.transitions()):
        why = world.first_violation(x, lab, y)
        if why:
            problems.append(f"segment {k} at t={x.time:.3f}s: {why}")
            break
    missed = set(range(len(sc.sites))) - sites_hit(impl, sc.sites)
    if missed:
        problems.append(f"sites never visited: {sorted(missed)}")
    if problems:
        for p in problems:
            print(f"invalid: {p}")
        return INFEASIBLE
    print(f"valid: {len(traj.labels)} segments, ends at t={impl.end_time:.3f}s, all {len(sc.sites)} sites visited")
    return OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iterplan", description="Energy-aware UAV/UGV task-site planning.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan once with the solver chain")
    p.add_argument("scenario", help="scenario YAML, or 'reference'")
    p.add_argument("--budget", type=float)
    p.add_argument("--emit-smt", metavar="PATH", help="write the team-level encoding as SMT-LIB2")
    p.add_argument("--out", metavar="PLAN")
    p.add_argument("--solvers", default="tdo,ao")
    p.add_argument("--horizon-steps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("execute", help="shrinking-horizon execution with replanning")
    p.add_argument("scenario")
    p.add_argument("--steps", type=int)
    p.add_argument("--step-budget", type=float)
    p.add_argument("--log", metavar="CSV")
    p.add_argument("--out", metavar="PLAN", help="write the executed implementation")
    p.add_argument("--solvers", default="tdo,ao")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_execute)

    p = sub.add_parser("bench", help="run a sweep config; figures are written next to the CSV")
    p.add_argument("config")
    p.add_argument("--out", default="bench.csv", metavar="CSV")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-report", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="render figures and a summary for a bench CSV")
    p.add_argument("csv")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("oracle", help="shortest plan under the discretization")
    p.add_argument("scenario")
    p.add_argument("--kmax", type=int)
    p.add_argument("--timeout", type=float, default=300.0)
    p.add_argument("--out", metavar="PLAN")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("validate", help="check a plan file against a scenario")
    p.add_argument("scenario")
    p.add_argument("plan")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return INPUT_ERROR if exc.code else OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UnsatisfiableClassError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return INFEASIBLE
    except (ScenarioError, PlanFileError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
