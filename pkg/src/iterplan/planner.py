"""Anytime planning across solvers, and shrinking-horizon execution with site retirement."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

from .ao import RecursiveFeasibilityError, refine_team_plan
from .geometry import Point
from .plan import Infeasible, Plan, Timeout, sites_hit
from .sampler import build_sampled_system
from .ts import Implementation, TaskSiteAssignment, classify_assignment
from .tdo import solve_tdo
from .vehicles import SystemState

log = logging.getLogger(__name__)

TDO_SHARE = 0.4  # of the total budget when no per-solver cap is given


class PlanningInfeasible(RuntimeError):
    """The first solver proved that no plan exists within the horizon."""


class NoPlanError(RuntimeError):
    """The first solver ran out of budget before finding any plan."""


@dataclass(frozen=True)
class Budget:
    t_total: float
    per_solver: float | None = None

    def __post_init__(self):
        if not self.t_total > 0:
            raise ValueError("total budget must be positive")
        if self.per_solver is not None and not 0 < self.per_solver <= self.t_total:
            raise ValueError("per-solver budget must be positive and at most the total")


@dataclass(frozen=True)
class SolverRun:
    solver: str
    objective: float | None
    elapsed: float
    accepted: bool
    note: str = ""


@dataclass(frozen=True)
class PlanningResult:
    plan: Plan
    runs: tuple[SolverRun, ...]
    elapsed: float

    def objective_of(self, solver: str) -> float | None:
        for r in self.runs:
            if r.solver == solver:
                return r.objective
        return None


def improvement_delta(f_tdo, f_ao) -> float:
    """Relative improvement of the refined plan over the team-level plan."""
    a = f_tdo.objective if isinstance(f_tdo, Plan) else float(f_tdo)
    b = f_ao.objective if isinstance(f_ao, Plan) else float(f_ao)
    if a == 0:
        raise ZeroDivisionError("team-level objective is zero; the improvement ratio is undefined")
    return (a - b) / a


def run_iterative(
    scenario,
    sites: Sequence[Point],
    x0: SystemState,
    solvers: Sequence[str] = ("tdo", "ao"),
    budget: Budget | float = 300.0,
    horizon: float | None = None,
    seed: int = 0,
) -> PlanningResult:
    """Call each solver in turn on the remaining budget, keeping the best plan so far."""
    if not isinstance(budget, Budget):
        budget = Budget(float(budget))
    solvers = list(solvers)
    if not solvers or solvers[0] != "tdo":
        raise ValueError("the first solver must be 'tdo'")
    unknown = set(solvers) - {"tdo", "ao"}
    if unknown:
        raise ValueError(f"unknown solvers {sorted(unknown)}")
    start = time.monotonic()
    remaining = lambda: budget.t_total + start - time.monotonic()  # noqa: E731
    p = scenario.params
    gamma_d = p.gamma_d
    horizon = horizon if horizon is not None else p.horizon_steps * gamma_d
    k_max = max(1, math.floor(horizon / gamma_d + 1e-9))
    sites = [tuple(map(float, s)) for s in sites]

    first_share = budget.t_total if len(solvers) == 1 else budget.t_total * TDO_SHARE
    if budget.per_solver is not None:
        first_share = min(first_share, budget.per_solver)
    t0 = time.monotonic()
    S = build_sampled_system(scenario.with_sites(sites), extra_states=[x0], time_origin=x0.time)
    spec = classify_assignment(S, TaskSiteAssignment.from_points(sites))
    res = solve_tdo(S, spec, x0, k_max, max(first_share - (time.monotonic() - t0), 1e-3), sites=sites, seed=seed)
    if isinstance(res, Infeasible):
        raise PlanningInfeasible(res.reason)
    if isinstance(res, Timeout):
        raise NoPlanError(res.reason)
    plan = res
    runs = [SolverRun("tdo", plan.objective, time.monotonic() - t0, True)]

    for name in solvers[1:]:
        left = remaining()
        if left <= 0:
            break
        if budget.per_solver is not None:
            left = min(left, budget.per_solver)
        t0 = time.monotonic()
        try:
            outcome = refine_team_plan(plan, sites, left)
        except RecursiveFeasibilityError as exc:
            log.error("agent refinement rejected its anchor: %s", exc)
            runs.append(SolverRun(name, None, time.monotonic() - t0, False, str(exc)))
            continue
        cand = outcome.plan
        ok = cand.objective <= plan.objective
        runs.append(SolverRun(name, cand.objective, time.monotonic() - t0, ok))
        if ok:
            plan = cand
    return PlanningResult(plan, tuple(runs), time.monotonic() - start)


def iterative_plan(
    scenario,
    sites: Sequence[Point],
    x0: SystemState,
    solvers: Sequence[str] = ("tdo", "ao"),
    budget: Budget | float = 300.0,
    horizon: float | None = None,
    seed: int = 0,
) -> Plan:
    return run_iterative(scenario, sites, x0, solvers, budget, horizon, seed).plan


# -- shrinking-horizon execution ----------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    step: int
    compute_time: float
    producer: str
    objective_before: float | None
    objective_after: float
    tdo_objective: float | None
    refined_objective: float | None
    delta_f: float
    retired: tuple[int, ...]
    fallback: bool = False


@dataclass
class ExecutionLog:
    records: list[StepRecord] = field(default_factory=list)
    remaining: tuple[int, ...] = ()

    @property
    def completed(self) -> bool:
        return not self.remaining

    def objectives(self) -> list[float]:
        return [r.objective_after for r in self.records]

    def deltas(self) -> list[float]:
        return [r.delta_f for r in self.records]


def _shift(plan: Plan, offset: float) -> Plan:
    impl = plan.implementation.restrict(offset, plan.implementation.total_duration)
    return Plan(impl.trajectory(), impl, plan.objective, plan.producer, plan.horizon_steps, plan.details)


def shrinking_horizon_execute(
    scenario,
    sites: Sequence[Point],
    x0: SystemState,
    steps: int | None = None,
    step_budget: float | None = None,
    gamma_step: float | None = None,
    solvers: Sequence[str] = ("tdo", "ao"),
    seed: int = 0,
) -> tuple[Implementation, ExecutionLog]:
    """Replan at every step, execute one step of the accepted plan, retire the sites it visited."""
    p = scenario.params
    steps = p.horizon_steps if steps is None else steps
    step_budget = p.step_budget if step_budget is None else step_budget
    gamma_step = p.gamma_d if gamma_step is None else gamma_step
    if step_budget > gamma_step:
        raise ValueError("the step budget must not exceed the step duration")
    all_sites = [tuple(map(float, s)) for s in sites]
    left = list(range(len(all_sites)))
    log_ = ExecutionLog(remaining=tuple(left))
    executed = Implementation((), origin=x0)
    if not left:
        return executed, log_
    state = x0
    incumbent: Plan | None = None
    for k in range(1, steps + 1):
        horizon = (steps - k + 1) * gamma_step
        before = incumbent.objective if incumbent is not None else None
        t0 = time.monotonic()
        result = None
        try:
            result = run_iterative(scenario, [all_sites[i] for i in left], state, solvers, Budget(step_budget), horizon, seed + k - 1)
        except (PlanningInfeasible, NoPlanError) as exc:
            log.warning("step %d: replanning failed (%s)", k, exc)
        elapsed = time.monotonic() - t0
        fallback = False
        if result is not None and (incumbent is None or result.plan.objective <= incumbent.objective):
            incumbent = result.plan
        elif incumbent is None:
            raise NoPlanError(f"no plan at step {k}")
        else:
            fallback = result is None
        tdo_f = result.objective_of("tdo") if result else None
        ref_f = result.plan.objective if result else None
        delta = improvement_delta(tdo_f, ref_f) if result and tdo_f else 0.0

        span = min(gamma_step, incumbent.implementation.total_duration)
        step_impl = incumbent.implementation.restrict(0.0, span)
        hit_local = sites_hit(step_impl, [all_sites[i] for i in left], until=span, resolution=1.0)
        retired = tuple(sorted(left[i] for i in hit_local))
        left = [i for i in left if i not in retired]
        executed = executed.then(step_impl)
        log_.records.append(
            StepRecord(k, elapsed, incumbent.producer, before, incumbent.objective, tdo_f, ref_f, delta, retired, fallback)
        )
        if not left:
            break
        state = step_impl.end_state
        incumbent = _shift(incumbent, span)
    log_.remaining = tuple(left)
    return executed, log_
