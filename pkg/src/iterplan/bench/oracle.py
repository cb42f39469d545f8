"""Exhaustive minimum-horizon baseline over the same discretization as the team-level solver."""

from __future__ import annotations

import time

from ..csolve import Status, check_sat
from ..plan import Infeasible, Plan, Timeout
from ..sampler import SampledSystem
from ..ts import SpecClasses
from ..tdo import TdoInstance, decode_tdo, encode_tdo, lower_horizon, make_plan, solve_tdo
from ..vehicles import SystemState


def optimal_oracle(
    S: SampledSystem,
    spec: SpecClasses,
    x0: SystemState,
    K_max: int,
    timeout: float,
    sites=(),
    seed: int = 0,
) -> Plan | Infeasible | Timeout:
    """Shortest plan by deepening one step at a time: Unsat at K-1 and Sat at K proves K minimal.

    On timeout the returned bound is the time of the first horizon not yet refuted.
    """
    if timeout <= 0:
        raise ValueError("timeout must be positive")
    deadline = time.monotonic() + timeout
    if spec.n_classes == 0:
        return solve_tdo(S, spec, x0, K_max, timeout, sites, seed, producer="oracle")
    k_lo = lower_horizon(S, spec, x0)
    for K in range(k_lo, K_max + 1):
        left = deadline - time.monotonic()
        bound = x0.time + K * S.gamma_d
        if left <= 0:
            return Timeout(f"refuted every horizon below K={K}", bound)
        inst = TdoInstance(S, spec, x0, K)
        encode_tdo(inst)
        res = check_sat(inst.problem, left, seed=seed)
        if res.status == Status.SAT:
            traj, sol = decode_tdo(inst, res.model)
            return make_plan(traj, sol, sites, "oracle")
        if res.status == Status.UNKNOWN:
            return Timeout(f"undecided at K={K}", bound)
    return Infeasible(f"no plan within {K_max} steps")
