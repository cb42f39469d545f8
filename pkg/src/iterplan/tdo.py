"""Team-level discrete optimization: a bounded-horizon encoding of the sampled system.

Per step k the encoding carries every vehicle's node, energy level and
move/dock decisions; a model of it is a feasible team trajectory that visits
every key class.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

from .csolve import FALSE, And, ConstraintProblem, Eq, Implies, Not, Or, Status, Var, check_sat, lin
from .geometry import dist
from .plan import Infeasible, Plan, Timeout, step_implementation
from .sampler import SampledSystem
from .ts import Label, Rule, SpecClasses, Trajectory, first_invalid_step, unsatisfied_classes
from .vehicles import Flag, SystemState, VehicleKind, VehicleState


class DecodeIntegrityError(RuntimeError):
    """A solver model decoded into a trajectory the system rejects."""


class InfeasibleByConstruction(ValueError):
    """A specification class has no key states and no key transitions."""


@dataclass
class TdoInstance:
    S: SampledSystem
    spec: SpecClasses
    x0: SystemState
    K: int
    problem: ConstraintProblem | None = None
    pos: dict[int, list[Var]] = field(default_factory=dict)  # vehicle -> per-step node var
    level: dict[int, list[Var]] = field(default_factory=dict)
    move: dict[int, list[Var]] = field(default_factory=dict)
    dock: dict[int, list[Var]] = field(default_factory=dict)

    @property
    def fleet(self):
        return self.S.world.fleet


@dataclass(frozen=True)
class TdoSolution:
    """Raw per-step decisions of a decoded model, kept for agent-level refinement."""

    S: SampledSystem
    nodes: tuple[tuple[int, ...], ...]  # [vehicle][k] node id
    levels: tuple[tuple[int, ...], ...]
    moving: tuple[tuple[bool, ...], ...]  # [vehicle][k], k < K
    docked: tuple[tuple[bool, ...], ...]  # [vehicle][k], k < K; always False for UGVs
    K: int
    completion_step: int


def _x0_nodes(S: SampledSystem, x0: SystemState) -> list[int]:
    out = []
    for j, v in enumerate(x0.vehicles):
        n = S.node_at(v.position)
        if n is None:
            raise ValueError(f"vehicle {j} starts at {v.position}, which is not a sampled node")
        if S.world.fleet[j].kind == VehicleKind.UGV and n not in S.road_index:
            raise ValueError(f"UGV {j} starts off the sampled road")
        out.append(n)
    return out


def encode_tdo(inst: TdoInstance) -> ConstraintProblem:
    S, spec, x0, K = inst.S, inst.spec, inst.x0, inst.K
    if K < 1:
        raise ValueError("horizon must be at least one step")
    for i, nodes in spec.key_state_classes:
        if not nodes:
            raise InfeasibleByConstruction(f"class {i} has no key states")
    for i, edges in spec.key_transition_classes:
        if not edges:
            raise InfeasibleByConstruction(f"class {i} has no key transitions")
    fleet = inst.fleet
    q = S.levels
    P = ConstraintProblem(f"tdo_K{K}")
    start_nodes = _x0_nodes(S, x0)
    road_ids = S.road_ids
    ridx = S.road_index
    depots = set(S.depot_ids)
    road_depots = [ridx[d] for d in S.depot_ids]
    n_air = len(S.nodes)

    for j, spec_j in enumerate(fleet.vehicles):
        if spec_j.kind == VehicleKind.UGV:
            inst.pos[j] = [P.new_int(f"pg{j}_{k}", 0, len(road_ids) - 1) for k in range(K + 1)]
            inst.level[j] = [P.new_int(f"bg{j}_{k}", 0, q.B_max_g) for k in range(K + 1)]
            inst.move[j] = [P.new_bool(f"vg{j}_{k}") for k in range(K)]
        else:
            inst.pos[j] = [P.new_int(f"pa{j}_{k}", 0, n_air - 1) for k in range(K + 1)]
            inst.level[j] = [P.new_int(f"ba{j}_{k}", 0, q.B_max_a) for k in range(K + 1)]
            inst.move[j] = [P.new_bool(f"va{j}_{k}") for k in range(K)]
            if spec_j.host is not None:
                inst.dock[j] = [P.new_bool(f"s{j}_{k}") for k in range(K)]

    def at_node(j: int, k: int, node: int):
        """Literal: vehicle j occupies sampled node `node` at step k."""
        if fleet[j].kind == VehicleKind.UGV:
            return Eq(inst.pos[j][k], ridx[node]) if node in ridx else FALSE
        return Eq(inst.pos[j][k], node)

    def docked(j: int, k: int):
        return inst.dock[j][k] if j in inst.dock else FALSE

    # initial state
    for j, v in enumerate(x0.vehicles):
        P.add(at_node(j, 0, start_nodes[j]))
        if fleet[j].kind == VehicleKind.UGV:
            P.add(Eq(inst.level[j][0], q.ugv_floor(v.energy)))
        else:
            P.add(Eq(inst.level[j][0], q.uav_floor(v.energy)))
            if j in inst.dock:
                P.add(inst.dock[j][0] if v.flag == Flag.UAV_DOCKED else Not(inst.dock[j][0]))

    for k in range(K):
        for j, spec_j in enumerate(fleet.vehicles):
            p0, p1 = inst.pos[j][k], inst.pos[j][k + 1]
            b0, b1 = inst.level[j][k], inst.level[j][k + 1]
            mv = inst.move[j][k]
            if spec_j.kind == VehicleKind.UGV:
                for r, node in enumerate(road_ids):
                    nbrs = [ridx[n] for n in S.adjacency_g.get(node, ())]
                    here = Eq(p0, r)
                    P.add(Implies(And(here, mv), Or(*[Eq(p1, t) for t in nbrs])) if nbrs else Implies(here, Not(mv)))
                    P.add(Implies(And(here, Not(mv)), Eq(p1, r)))
                at_depot = Or(*[Eq(p0, r) for r in road_depots]) if road_depots else FALSE
                P.add(Implies(And(at_depot, Not(mv)), Eq(b1, q.B_max_g)))
                hosted = [i for i in fleet.hosted_by(j) if i in inst.dock]
                for n_docked in range(0, min(2, len(hosted)) + 1):
                    for subset in itertools.combinations(hosted, n_docked):
                        pattern = [inst.dock[i][k] if i in subset else Not(inst.dock[i][k]) for i in hosted]
                        cost_move = q.B_move_g + n_docked * q.B_charge_g
                        cost_idle = q.B_idle_g + n_docked * q.B_charge_g
                        P.add(Implies(And(mv, *pattern), lin([(1, b1), (-1, b0)], "=", -cost_move)))
                        P.add(Implies(And(Not(mv), Not(at_depot), *pattern), lin([(1, b1), (-1, b0)], "=", -cost_idle)))
                if len(hosted) > 2:
                    for trio in itertools.combinations(hosted, 3):
                        P.add(Not(And(*[inst.dock[i][k] for i in trio])))
            else:
                s = docked(j, k)
                for node in range(n_air):
                    here = Eq(p0, node)
                    nbrs = S.adjacency_a.get(node, ())
                    P.add(Implies(And(here, mv), Or(*[Eq(p1, t) for t in nbrs])) if nbrs else Implies(here, Not(mv)))
                    P.add(Implies(And(here, Not(mv), Not(s)), Eq(p1, node)))
                if j in inst.dock:
                    host = spec_j.host
                    P.add(Implies(s, Not(mv)))
                    for r, node in enumerate(road_ids):
                        P.add(Implies(And(s, Eq(inst.pos[host][k], r)), Eq(p0, node)))
                        P.add(Implies(And(s, Eq(inst.pos[host][k + 1], r)), Eq(p1, node)))
                at_depot = Or(*[Eq(p0, d) for d in sorted(depots)]) if depots else FALSE
                P.add(Implies(mv, lin([(1, b1), (-1, b0)], "=", -q.B_move_a)))
                P.add(Implies(And(Not(mv), Not(s), Not(at_depot)), lin([(1, b1), (-1, b0)], "=", 0)))
                charging = And(Not(mv), Or(s, at_depot))
                for b, to in enumerate(q.charge_to):
                    P.add(Implies(And(charging, Eq(b0, b)), Eq(b1, to)))

    # coverage of every key class
    for _, nodes in spec.key_state_classes:
        ids = [S.node_at(p) for p in nodes]
        lits = [at_node(j, k, n) for k in range(K + 1) for j in range(len(fleet)) for n in ids if n is not None]
        P.add(Or(*[l for l in lits if l is not FALSE]))
    for _, edges in spec.key_transition_classes:
        lits = []
        for a, b in sorted(edges):
            na, nb = S.node_at(a), S.node_at(b)
            for k in range(K):
                for j in range(len(fleet)):
                    la, lb = at_node(j, k, na), at_node(j, k + 1, nb)
                    if la is not FALSE and lb is not FALSE:
                        lits.append(And(la, lb))
        P.add(Or(*lits))
    inst.problem = P
    return P


def _completion_step(traj_nodes, S: SampledSystem, spec: SpecClasses, K: int) -> int:
    """First step by which every key class has been visited."""
    for kk in range(K + 1):
        occupied = {S.pos(traj_nodes[j][k]) for j in range(len(traj_nodes)) for k in range(kk + 1)}
        okeys = {(round(p[0], 6) + 0.0, round(p[1], 6) + 0.0) for p in occupied}
        moves = set()
        for j in range(len(traj_nodes)):
            for k in range(kk):
                a, b = S.pos(traj_nodes[j][k]), S.pos(traj_nodes[j][k + 1])
                moves.add(((round(a[0], 6) + 0.0, round(a[1], 6) + 0.0), (round(b[0], 6) + 0.0, round(b[1], 6) + 0.0)))
        if all(n & okeys for _, n in spec.key_state_classes) and all(e & moves for _, e in spec.key_transition_classes):
            return kk
    return K


def decode_tdo(inst: TdoInstance, model, truncate: bool = True) -> tuple[Trajectory, TdoSolution]:
    S, fleet, K = inst.S, inst.fleet, inst.K
    q = S.levels
    nodes, levels, moving, dockd = [], [], [], []
    for j, spec_j in enumerate(fleet.vehicles):
        if spec_j.kind == VehicleKind.UGV:
            nodes.append(tuple(S.road_ids[model[v]] for v in inst.pos[j]))
        else:
            nodes.append(tuple(model[v] for v in inst.pos[j]))
        levels.append(tuple(model[v] for v in inst.level[j]))
        moving.append(tuple(bool(model[v]) for v in inst.move[j]))
        dockd.append(tuple(bool(model[v]) for v in inst.dock[j]) if j in inst.dock else (False,) * K)
    k_end = _completion_step(nodes, S, inst.spec, K) if truncate else K
    states = []
    for k in range(k_end + 1):
        if k == 0:
            states.append(inst.x0)
            continue
        vs = []
        for j, spec_j in enumerate(fleet.vehicles):
            x, y = S.pos(nodes[j][k])
            if spec_j.kind == VehicleKind.UGV:
                n = sum(1 for i in fleet.hosted_by(j) if k < K and dockd[i][k])
                vs.append(VehicleState(x, y, q.ugv_energy(levels[j][k]), Flag(n)))
            else:
                flag = Flag.UAV_DOCKED if k < K and dockd[j][k] else Flag.UAV_FREE
                vs.append(VehicleState(x, y, q.uav_energy(levels[j][k]), flag))
        states.append(SystemState(tuple(vs), inst.x0.time + k * S.gamma_d))
    traj = Trajectory(tuple(states), tuple(Label(S.gamma_d) for _ in range(k_end)))
    sol = TdoSolution(S, tuple(nodes), tuple(levels), tuple(moving), tuple(dockd), K, k_end)
    bad = first_invalid_step(S, traj)
    if bad is not None:
        why = S.world.first_violation(traj.states[bad], traj.labels[bad], traj.states[bad + 1])
        raise DecodeIntegrityError(f"step {bad} of the decoded plan is not a transition: {why}")
    return traj, sol


def step_rules(sol: TdoSolution, fleet, k: int) -> tuple[Rule, ...]:
    rules = []
    for j, spec_j in enumerate(fleet.vehicles):
        if spec_j.kind == VehicleKind.UAV and not sol.moving[j][k] and (sol.docked[j][k] or sol.nodes[j][k] in sol.S.depot_ids):
            rules.append(Rule.CHARGE)
        else:
            rules.append(Rule.LINEAR)
    return tuple(rules)


def lower_horizon(S: SampledSystem, spec: SpecClasses, x0: SystemState) -> int:
    """Sound lower bound on the number of steps needed to visit every class."""
    reach = S.cruise_v_a * S.gamma_d / 1000.0
    starts = [v.position for v in x0.vehicles]
    worst = 0.0
    targets = [list(n) for _, n in spec.key_state_classes] + [[a for a, _ in e] + [b for _, b in e] for _, e in spec.key_transition_classes]
    for pts in targets:
        worst = max(worst, min(dist(s, p) for s in starts for p in pts))
    return max(1, math.ceil(worst / reach - 1e-9))


def horizon_schedule(k_lo: int, k_max: int, growth: float = 1.5) -> list[int]:
    ks = []
    k = k_lo
    while k < k_max:
        ks.append(k)
        k = max(k + 1, math.ceil(k * growth))
    ks.append(k_max)
    return ks


def make_plan(traj: Trajectory, sol: TdoSolution, sites, producer: str) -> Plan:
    fleet = sol.S.world.fleet
    rules = [step_rules(sol, fleet, k) for k in range(len(traj.labels))]
    impl = step_implementation(traj, rules, sites, sol.S.world.model)
    return Plan(traj, impl, traj.states[-1].time, producer, sol.K, sol)


def solve_tdo(
    S: SampledSystem,
    spec: SpecClasses,
    x0: SystemState,
    K_max: int,
    budget: float,
    sites=(),
    seed: int = 0,
    K_lo: int | None = None,
    growth: float = 1.5,
    producer: str = "tdo",
) -> Plan | Infeasible | Timeout:
    """First feasible plan over a growing horizon schedule ending at `K_max`."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    deadline = time.monotonic() + budget
    if spec.n_classes == 0:
        traj = Trajectory((x0,), ())
        sol = TdoSolution(S, tuple((S.node_at(v.position),) for v in x0.vehicles), (), (), (), 0, 0)
        return Plan(traj, step_implementation(traj, [], sites), x0.time, producer, 0, sol)
    k_lo = lower_horizon(S, spec, x0) if K_lo is None else K_lo
    if k_lo > K_max:
        return Infeasible(f"at least {k_lo} steps are needed, horizon allows {K_max}")
    for K in horizon_schedule(k_lo, K_max, growth):
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            return Timeout(f"no plan found up to K={K}")
        inst = TdoInstance(S, spec, x0, K)
        encode_tdo(inst)
        res = check_sat(inst.problem, remaining, seed=seed)
        if res.status == Status.SAT:
            traj, sol = decode_tdo(inst, res.model)
            return make_plan(traj, sol, sites, producer)
        if res.status == Status.UNKNOWN:
            return Timeout(f"budget exhausted at K={K}")
    return Infeasible(f"no plan within {K_max} steps")


def uncovered(plan: Plan, spec: SpecClasses) -> list[int]:
    return unsatisfied_classes(plan.trajectory, spec)
