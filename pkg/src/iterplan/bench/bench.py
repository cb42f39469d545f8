"""Agents and sites sweeps on generated desk-scale scenarios, compared against the optimal baseline."""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..plan import Infeasible, Plan, Timeout
from ..planner import Budget, NoPlanError, PlanningInfeasible, run_iterative, shrinking_horizon_execute
from ..sampler import build_sampled_system
from ..scenario import Params, ScenarioError
from ..ts import classify_assignment
from .generate import desk_scenario
from .oracle import optimal_oracle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepSpec:
    kind: str  # "agents" or "sites"
    groups: tuple[int, ...]
    sites: tuple[int, ...]


@dataclass(frozen=True)
class BenchConfig:
    sweeps: tuple[SweepSpec, ...]
    seeds: int = 3
    seed_base: int = 0
    budget: float = 60.0
    oracle_timeout: float = 300.0
    horizon_steps: int = 24
    execute: bool = False
    step_budget: float = 30.0
    workers: int = 1
    name: str = "bench"


def _ints(value, path: str) -> tuple[int, ...]:
    vals = value if isinstance(value, list) else [value]
    try:
        out = tuple(int(v) for v in vals)
    except (TypeError, ValueError):
        raise ScenarioError(path, "expected an integer or a list of integers") from None
    if not out or min(out) < 1:
        raise ScenarioError(path, "values must be positive")
    return out


def parse_config(data: Any) -> BenchConfig:
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "expected a mapping")
    raw = data.get("sweeps")
    if not isinstance(raw, list) or not raw:
        raise ScenarioError("sweeps", "expected a non-empty list")
    sweeps = []
    for i, s in enumerate(raw):
        if not isinstance(s, dict) or s.get("kind") not in ("agents", "sites"):
            raise ScenarioError(f"sweeps[{i}].kind", "expected 'agents' or 'sites'")
        sweeps.append(SweepSpec(s["kind"], _ints(s.get("groups", 1), f"sweeps[{i}].groups"), _ints(s.get("sites", 4), f"sweeps[{i}].sites")))
    kw = {}
    for f in fields(BenchConfig):
        if f.name in ("sweeps",) or f.name not in data:
            continue
        default = getattr(BenchConfig(()), f.name)
        try:
            kw[f.name] = type(default)(data[f.name])
        except (TypeError, ValueError):
            raise ScenarioError(f.name, f"expected {type(default).__name__}") from None
    cfg = BenchConfig(tuple(sweeps), **kw)
    if cfg.seeds < 1 or cfg.budget <= 0 or cfg.oracle_timeout <= 0 or cfg.workers < 1:
        raise ScenarioError("<root>", "seeds, budget, oracle_timeout and workers must be positive")
    return cfg


def load_config(path) -> BenchConfig:
    try:
        return parse_config(yaml.safe_load(Path(path).read_text()))
    except FileNotFoundError:
        raise ScenarioError(str(path), "file not found") from None
    except yaml.YAMLError as exc:
        raise ScenarioError(str(path), f"not valid YAML: {exc}") from None


@dataclass
class Row:
    sweep: str
    seed: int
    groups: int
    n_sites: int
    scenario: str
    status: str = "ok"  # ok | infeasible | timeout | error
    plan_time: float | None = None
    tdo_time: float | None = None
    compute_time: float | None = None
    delta_f: float | None = None
    oracle_time: float | None = None
    oracle_compute: float | None = None
    oracle_timeout: bool = False
    optimality_gap: float | None = None
    tdo_gap: float | None = None
    executed_time: float | None = None
    step_deltas: str = ""
    note: str = ""


WALL_CLOCK_COLUMNS = ("compute_time", "oracle_compute")


def _relative_plan_time(plan: Plan, start: float) -> float:
    return plan.objective - start


def run_one(cfg: BenchConfig, sweep: str, groups: int, n_sites: int, seed: int) -> Row:
    params = Params(plan_budget=cfg.budget, step_budget=cfg.step_budget, horizon_steps=cfg.horizon_steps)
    sc = desk_scenario(seed, n_sites=n_sites, n_groups=groups, params=params)
    row = Row(sweep, seed, groups, n_sites, sc.name)
    x0 = sc.initial_state()
    horizon = cfg.horizon_steps * params.gamma_d
    t0 = time.monotonic()
    try:
        res = run_iterative(sc, sc.sites, x0, ("tdo", "ao"), Budget(cfg.budget), horizon, seed)
    except PlanningInfeasible as exc:
        row.status, row.note = "infeasible", str(exc)
    except NoPlanError as exc:
        row.status, row.note = "timeout", str(exc)
    except Exception as exc:  # recorded as a row, never aborts the sweep
        log.exception("run failed")
        row.status, row.note = "error", f"{type(exc).__name__}: {exc}"
    else:
        row.plan_time = _relative_plan_time(res.plan, x0.time)
        row.tdo_time = res.objective_of("tdo") - x0.time
        row.delta_f = (row.tdo_time - row.plan_time) / row.tdo_time if row.tdo_time else 0.0
    row.compute_time = time.monotonic() - t0

    t0 = time.monotonic()
    S = build_sampled_system(sc, extra_states=[x0])
    spec = classify_assignment(S, sc.assignment())
    o = optimal_oracle(S, spec, x0, cfg.horizon_steps, cfg.oracle_timeout, sc.sites, seed)
    row.oracle_compute = time.monotonic() - t0
    if isinstance(o, Plan):
        row.oracle_time = o.objective - x0.time
        if row.plan_time is not None and row.oracle_time > 0:
            row.optimality_gap = (row.plan_time - row.oracle_time) / row.oracle_time
            row.tdo_gap = (row.tdo_time - row.oracle_time) / row.oracle_time
    elif isinstance(o, Timeout):
        row.oracle_timeout = True
    elif isinstance(o, Infeasible):
        row.note = (row.note + " oracle: " + o.reason).strip()

    if cfg.execute and row.status == "ok":
        impl, elog = shrinking_horizon_execute(sc, sc.sites, x0, cfg.horizon_steps, min(cfg.step_budget, params.gamma_d), params.gamma_d, seed=seed)
        row.executed_time = impl.end_time - x0.time
        row.step_deltas = " ".join(f"{d:.6f}" for d in elog.deltas())
    return row


def _jobs(cfg: BenchConfig):
    for sw in cfg.sweeps:
        for g in sw.groups:
            for n in sw.sites:
                for s in range(cfg.seed_base, cfg.seed_base + cfg.seeds):
                    yield (cfg, sw.kind, g, n, s)


def _run_job(job) -> Row:
    return run_one(*job)


def run_bench(cfg: BenchConfig, out: str | Path | None = None) -> list[Row]:
    jobs = list(_jobs(cfg))
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(_run_job, jobs))
    else:
        rows = [_run_job(j) for j in jobs]
    if out is not None:
        write_rows(out, rows)
    return rows


def write_rows(path, rows: list[Row]) -> None:
    cols = [f.name for f in fields(Row)]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in asdict(r).items()})


def read_rows(path) -> list[Row]:
    types = {f.name: f.type for f in fields(Row)}
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for k, v in rec.items():
                t = str(types[k])
                if v == "" and "None" in t:
                    kw[k] = None
                elif t.startswith("int"):
                    kw[k] = int(v)
                elif t.startswith("float"):
                    kw[k] = float(v)
                elif t.startswith("bool"):
                    kw[k] = v == "True"
                else:
                    kw[k] = v
            rows.append(Row(**kw))
    return rows


@dataclass
class GroupSummary:
    sweep: str
    groups: int
    n_sites: int
    runs: int
    pi_timeouts: int
    oracle_timeouts: int
    plan_time_mean: float | None
    plan_time_iqr: tuple[float, float] | None
    compute_mean: float | None
    delta_f_mean: float | None
    max_gap: float | None
    step_delta_iqr: list[tuple[float, float, float]] = field(default_factory=list)


def _iqr(xs):
    if not xs:
        return None
    q1, q3 = np.percentile(xs, [25, 75])
    return (float(q1), float(q3))


def summarize(rows: list[Row]) -> list[GroupSummary]:
    keys = sorted({(r.sweep, r.groups, r.n_sites) for r in rows})
    out = []
    for key in keys:
        rs = [r for r in rows if (r.sweep, r.groups, r.n_sites) == key]
        pt = [r.plan_time for r in rs if r.plan_time is not None]
        ct = [r.compute_time for r in rs if r.compute_time is not None]
        df = [r.delta_f for r in rs if r.delta_f is not None]
        gaps = [r.optimality_gap for r in rs if r.optimality_gap is not None]
        series = [[float(x) for x in r.step_deltas.split()] for r in rs if r.step_deltas]
        steps = []
        for k in range(max((len(s) for s in series), default=0)):
            col = [s[k] for s in series if len(s) > k]
            q1, med, q3 = np.percentile(col, [25, 50, 75])
            steps.append((float(q1), float(med), float(q3)))
        out.append(
            GroupSummary(
                *key,
                runs=len(rs),
                pi_timeouts=sum(r.status == "timeout" for r in rs),
                oracle_timeouts=sum(r.oracle_timeout for r in rs),
                plan_time_mean=float(np.mean(pt)) if pt else None,
                plan_time_iqr=_iqr(pt),
                compute_mean=float(np.mean(ct)) if ct else None,
                delta_f_mean=float(np.mean(df)) if df else None,
                max_gap=max(gaps) if gaps else None,
                step_delta_iqr=steps,
            )
        )
    return out


def max_gap(rows: list[Row], sweep: str | None = None) -> float | None:
    gaps = [r.optimality_gap for r in rows if r.optimality_gap is not None and (sweep is None or r.sweep == sweep)]
    return max(gaps) if gaps else None
