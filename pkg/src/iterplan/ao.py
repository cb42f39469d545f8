"""Agent-level optimization: exact-time route refinement for one UAV at a time.

The team plan fixes the UGV motion and which vehicle serves each site. Every
UAV then solves a small routing problem over its own sites, the depots and
the rendezvous its host UGV offers at each team step. Flights use the maximum
speed instead of the sampler's cruise speed, and waiting is free, so the
team route itself (the anchor) is always a feasible answer.

Times are kept as integer microseconds and energies as integer microjoules
while searching; both convert exactly to `Fraction` seconds and kJ.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Sequence

from .csolve import And, ConstraintProblem, Eq, Implies, Not, Or, lin
from .geometry import Point, dist, lerp, project_on_segment
from .plan import CUT_GAP, Plan
from .ts import SITE_RADIUS, Implementation, Rule, Segment, first_invalid_step
from .vehicles import EnergyModel, Flag, SystemState, VehicleKind, VehicleState
from .world import World

TIME_TICKS = 10**6  # per second
ENERGY_TICKS = 10**9  # per kJ


class RecursiveFeasibilityError(RuntimeError):
    """The team route of an agent is not a solution of its own refinement problem."""


class StopKind(str, Enum):
    START = "start"
    SITE = "site"
    DEPOT = "depot"
    RENDEZVOUS = "rendezvous"
    WAYPOINT = "waypoint"


@dataclass(frozen=True)
class Stop:
    kind: StopKind
    position: Point
    ref: int = -1  # site index, depot index, team step or anchor knot
    pinned: int | None = None  # required departure offset (ticks) at a rendezvous


def _ticks_up(seconds: float) -> int:
    return math.ceil(seconds * TIME_TICKS - 1e-6)


def _energy_up(kj: float) -> int:
    return math.ceil(kj * ENERGY_TICKS - 1e-6)


def _energy_down(kj: float) -> int:
    return math.floor(kj * ENERGY_TICKS + 1e-6) if kj > 0 else 0


@dataclass(frozen=True)
class ChargeBound:
    """Lower bound on the energy after one charging window, as the minimum of chords.

    Chords through points of the (concave) charging map lie below it between
    their endpoints, so their pointwise minimum never overstates a charge.
    """

    knots: tuple[tuple[int, int], ...]  # (energy before, energy after) in ticks
    capacity: int

    @classmethod
    def build(cls, model: EnergyModel, window: float, n: int = 40) -> "ChargeBound":
        cap = model.uav_capacity
        pts = {cap * i / n for i in range(n + 1)}
        taper = model.charge_knee - model.charge_flat_power * window / 1000.0
        pts.update(e for e in (taper, model.charge_knee) if 0 < e < cap)
        knots = []
        for e in sorted(pts):
            e_t = _energy_down(e)
            after = min(_energy_down(model.integrate_charge(e_t / ENERGY_TICKS, window)), _energy_down(cap))
            knots.append((e_t, after))
        return cls(tuple(knots), _energy_down(cap))

    def after(self, e: int) -> int:
        best = self.capacity
        for (e0, v0), (e1, v1) in zip(self.knots, self.knots[1:]):
            best = min(best, v0 + ((v1 - v0) * (e - e0)) // (e1 - e0))
        return best

    def chords(self) -> list[tuple[Fraction, Fraction]]:
        """(slope, intercept) pairs in kJ of every chord line."""
        out = []
        for (e0, v0), (e1, v1) in zip(self.knots, self.knots[1:]):
            slope = Fraction(v1 - v0, e1 - e0)
            out.append((slope, Fraction(v0, ENERGY_TICKS) - slope * Fraction(e0, ENERGY_TICKS)))
        return out


@dataclass(frozen=True)
class AoInstance:
    agent: int
    stops: tuple[Stop, ...]  # stops[0] is the start
    site_ids: tuple[int, ...]  # task sites this agent must visit, as indices into the assignment
    gamma_d: int  # ticks
    energy0: int  # ticks
    horizon: int  # ticks; end of the team plan
    transit_time: tuple[tuple[int, ...], ...]  # ticks
    transit_energy: tuple[tuple[int, ...], ...]  # energy ticks
    cover_stop: tuple[int, ...]  # bitmask over site_ids reached at each stop
    cover_leg: tuple[tuple[int, ...], ...]  # bitmask passed on the straight leg i -> j
    charge: ChargeBound
    anchor_route: tuple[int, ...]
    origin_time: float = 0.0  # absolute time of offset 0
    free_speed: float = 16.0

    @property
    def N_v(self) -> list[int]:
        return [i for i, s in enumerate(self.stops) if s.kind == StopKind.SITE]

    @property
    def N_d(self) -> list[int]:
        return [i for i, s in enumerate(self.stops) if s.kind == StopKind.DEPOT]

    @property
    def N_g(self) -> list[int]:
        return [i for i, s in enumerate(self.stops) if s.kind == StopKind.RENDEZVOUS]

    @property
    def full_mask(self) -> int:
        return (1 << len(self.site_ids)) - 1

    def phi(self, i: int, j: int) -> Fraction:
        return Fraction(self.transit_time[i][j], TIME_TICKS)

    def psi(self, i: int, j: int) -> Fraction:
        return Fraction(self.transit_energy[i][j], ENERGY_TICKS)

    def is_ride(self, i: int, j: int) -> bool:
        a, b = self.stops[i], self.stops[j]
        return a.kind == b.kind == StopKind.RENDEZVOUS and b.ref == a.ref + 1


@dataclass(frozen=True)
class AoSolution:
    """A refined route with exact departure times and energies per stop."""

    agent: int
    route: tuple[int, ...]
    times: tuple[Fraction, ...]  # departure offset from each stop, s
    energies: tuple[Fraction, ...]  # energy when leaving each stop, kJ
    travel_time: tuple[Fraction, ...]  # into stop k, k >= 1
    slack: tuple[Fraction, ...]  # spent at stop k (waiting and charging)
    travel_energy: tuple[Fraction, ...]  # signed change on the way into stop k
    stop_gain: tuple[Fraction, ...]  # charge gained at stop k
    objective: Fraction

    def recurrences_hold(self) -> bool:
        for k in range(1, len(self.route)):
            if self.times[k] != self.times[k - 1] + self.travel_time[k] + self.slack[k]:
                return False
            if self.energies[k] != self.energies[k - 1] + self.travel_energy[k] + self.stop_gain[k]:
                return False
        return all(a < b for a, b in zip(self.times, self.times[1:]) if a != b) and self.times == tuple(sorted(self.times))


@dataclass(frozen=True)
class Incumbent:
    """No better route was found; the agent keeps its team-plan route."""

    agent: int
    objective: Fraction
    reason: str = ""


# -- site assignment and extraction ------------------------------------------


def _first_hits(impl: Implementation, sites: Sequence[Point], fleet) -> list[tuple[float, int]]:
    """(offset, vehicle) of the visit that makes each site some vehicle's responsibility.

    A site goes to the UAV that reaches it first if any UAV does, else to the
    first UGV; the UGV route is frozen during refinement, so keeping its share
    small leaves the most room for improvement.
    """
    n = len(fleet)
    first: list[list[float | None]] = [[None] * n for _ in sites]

    def scan(offsets):
        for g in offsets:
            st = impl.state_at(g)
            for i, s in enumerate(sites):
                row = first[i]
                for j in range(n):
                    if row[j] is None and dist(st.vehicles[j].position, s) <= SITE_RADIUS + 1e-12:
                        row[j] = g

    scan(impl.offsets)
    if any(all(g is None for g in row) for row in first):
        scan(impl.sample_offsets(1.0))
    out = []
    for i, row in enumerate(first):
        uav = [(g, j) for j, g in enumerate(row) if g is not None and fleet[j].kind == VehicleKind.UAV]
        ugv = [(g, j) for j, g in enumerate(row) if g is not None and fleet[j].kind == VehicleKind.UGV]
        if not uav and not ugv:
            raise ValueError(f"site {i} is never visited by the team plan")
        out.append(min(uav) if uav else min(ugv))
    return out


def assign_sites(team_plan: Plan, sites: Sequence[Point], fleet) -> tuple[int, ...]:
    """Vehicle responsible for each site: whoever visits it first in the team plan."""
    return tuple(j for _, j in _first_hits(team_plan.implementation, sites, fleet))


def agent_completion(team_plan: Plan, sites: Sequence[Point], fleet, agent: int) -> float:
    """Offset by which `agent` has visited all of its assigned sites in the team plan."""
    hits = _first_hits(team_plan.implementation, sites, fleet)
    return max((g for g, j in hits if j == agent), default=0.0)


def _mask_of(points: Sequence[Point], p: Point) -> int:
    return sum(1 << b for b, s in enumerate(points) if dist(p, s) <= SITE_RADIUS + 1e-12)


def _leg_mask(points: Sequence[Point], a: Point, b: Point) -> int:
    m = 0
    for bit, s in enumerate(points):
        _, d = project_on_segment(s, a, b)
        if d <= SITE_RADIUS + 1e-12:
            m |= 1 << bit
    return m


def _anchor_stops(team_plan: Plan, agent: int, completion: float, depots, rendezvous: dict[int, int], world: World):
    """Stops replaying the team route of `agent` up to `completion` (offset, s)."""
    sol = team_plan.details
    impl = team_plan.implementation
    gamma_d = sol.S.gamma_d
    offs = impl.offsets
    out: list[tuple[StopKind, Point, int]] = []
    last_ride = None
    for k in range(len(team_plan.trajectory.labels)):
        t_k = k * gamma_d
        if t_k >= completion - 1e-9:
            break
        state_k = team_plan.trajectory.states[k]
        if sol.docked[agent][k]:
            if last_ride != k:
                out.append((StopKind.RENDEZVOUS, state_k.vehicles[agent].position, k))
            out.append((StopKind.RENDEZVOUS, team_plan.trajectory.states[k + 1].vehicles[agent].position, k + 1))
            last_ride = k + 1
            continue
        if sol.moving[agent][k]:
            for i, g in enumerate(offs):
                if t_k + 1e-9 < g <= t_k + gamma_d + 1e-9 and g <= completion + 1e-9:
                    out.append((StopKind.WAYPOINT, impl.segments[i - 1].end.vehicles[agent].position, i))
            continue
        pos = state_k.vehicles[agent].position
        if world.at_depot(pos):
            d = min(range(len(depots)), key=lambda i: dist(depots[i], pos))
            out.append((StopKind.DEPOT, depots[d], d))
    return out


def extract_agent_subproblem(
    team_plan: Plan,
    agent: int,
    sites: Sequence[Point],
    free_speed: float | None = None,
    assignment: Sequence[int] | None = None,
) -> AoInstance:
    """Refinement problem of one UAV, built from a team plan produced by TDO."""
    sol = team_plan.details
    S = sol.S
    world: World = S.world
    fleet = world.fleet
    model = world.model
    if fleet[agent].kind != VehicleKind.UAV:
        raise ValueError(f"vehicle {agent} is not a UAV")
    speed = model.uav_max_speed if free_speed is None else free_speed
    if assignment is None:
        assignment = assign_sites(team_plan, sites, fleet)
    mine = tuple(i for i, j in enumerate(assignment) if j == agent)
    points = [sites[i] for i in mine]
    completion = agent_completion(team_plan, sites, fleet, agent) if mine else 0.0

    x0 = team_plan.trajectory.states[0]
    stops: list[Stop] = [Stop(StopKind.START, x0.vehicles[agent].position)]
    stops += [Stop(StopKind.SITE, sites[i], i) for i in mine]
    depots = list(world.depots)
    depot_stop = {}
    for d, p in enumerate(depots):
        depot_stop[d] = len(stops)
        stops.append(Stop(StopKind.DEPOT, p, d))
    gamma_ticks = _ticks_up(S.gamma_d)
    rendezvous: dict[int, int] = {}
    host = fleet[agent].host
    if host is not None:
        for k, st in enumerate(team_plan.trajectory.states):
            rendezvous[k] = len(stops)
            stops.append(Stop(StopKind.RENDEZVOUS, st.vehicles[host].position, k, k * gamma_ticks))

    anchor = [0]
    for kind, pos, ref in _anchor_stops(team_plan, agent, completion, depots, rendezvous, world):
        if kind == StopKind.RENDEZVOUS:
            anchor.append(rendezvous[ref])
        elif kind == StopKind.DEPOT:
            anchor.append(depot_stop[ref])
        else:
            anchor.append(len(stops))
            stops.append(Stop(StopKind.WAYPOINT, pos, ref))

    n = len(stops)
    p16 = model.uav_power(speed)
    tt = [[0] * n for _ in range(n)]
    te = [[0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d = dist(stops[i].position, stops[j].position)
            t = _ticks_up(d * 1000.0 / speed) if d > 0 else 0
            e = _energy_up(p16 * t / TIME_TICKS / 1000.0) if t else 0
            tt[i][j] = tt[j][i] = t
            te[i][j] = te[j][i] = e
    cover_stop = tuple(_mask_of(points, s.position) for s in stops)
    cover_leg = tuple(tuple(_leg_mask(points, a.position, b.position) for b in stops) for a in stops)
    horizon = (len(team_plan.trajectory.states) - 1) * gamma_ticks
    return AoInstance(
        agent=agent,
        stops=tuple(stops),
        site_ids=mine,
        gamma_d=gamma_ticks,
        energy0=_energy_down(x0.vehicles[agent].energy),
        horizon=horizon,
        transit_time=tuple(map(tuple, tt)),
        transit_energy=tuple(map(tuple, te)),
        cover_stop=cover_stop,
        cover_leg=cover_leg,
        charge=ChargeBound.build(model, S.gamma_d),
        anchor_route=tuple(anchor),
        origin_time=x0.time,
        free_speed=speed,
    )


# -- route evaluation ---------------------------------------------------------


def _step(inst: AoInstance, i: int, j: int, t: int, e: int):
    """Earliest departure and energy at stop j after leaving i at (t, e); None if infeasible.

    Returns (travel, slack, travel_energy, gain, t', e').
    """
    stop = inst.stops[j]
    if stop.kind == StopKind.START:
        return None
    if inst.is_ride(i, j):
        if t != inst.stops[i].pinned:
            return None
        after = inst.charge.after(e)
        return inst.gamma_d, 0, after - e, 0, t + inst.gamma_d, after
    travel = inst.transit_time[i][j]
    arrive = t + travel
    e_arr = e - inst.transit_energy[i][j]
    if e_arr < 0:
        return None
    if stop.kind == StopKind.RENDEZVOUS:
        if arrive > stop.pinned:
            return None
        return travel, stop.pinned - arrive, -inst.transit_energy[i][j], 0, stop.pinned, e_arr
    if stop.kind == StopKind.DEPOT:
        start = -(-arrive // inst.gamma_d) * inst.gamma_d
        after = inst.charge.after(e_arr)
        slack = start - arrive + inst.gamma_d
        return travel, slack, -inst.transit_energy[i][j], after - e_arr, arrive + slack, after
    return travel, 0, -inst.transit_energy[i][j], 0, arrive, e_arr


def route_coverage(inst: AoInstance, route: Sequence[int]) -> int:
    m = inst.cover_stop[route[0]]
    for i, j in zip(route, route[1:]):
        m |= inst.cover_leg[i][j] | inst.cover_stop[j]
    return m


def evaluate_route(inst: AoInstance, route: Sequence[int]) -> AoSolution | None:
    """Earliest-time schedule of `route`, or None if it breaks an energy or timing rule."""
    if not route or route[0] != 0:
        return None
    t, e = 0, inst.energy0
    times, energies = [t], [e]
    tr, sl, te, gn = [0], [0], [0], [0]
    for i, j in zip(route, route[1:]):
        got = _step(inst, i, j, t, e)
        if got is None:
            return None
        travel, slack, d_e, gain, t, e = got
        tr.append(travel)
        sl.append(slack)
        te.append(d_e)
        gn.append(gain)
        times.append(t)
        energies.append(e)
    T = lambda x: Fraction(x, TIME_TICKS)  # noqa: E731
    E = lambda x: Fraction(x, ENERGY_TICKS)  # noqa: E731
    return AoSolution(
        agent=inst.agent,
        route=tuple(route),
        times=tuple(map(T, times)),
        energies=tuple(map(E, energies)),
        travel_time=tuple(map(T, tr)),
        slack=tuple(map(T, sl)),
        travel_energy=tuple(map(E, te)),
        stop_gain=tuple(map(E, gn)),
        objective=T(times[-1]),
    )


# -- search -----------------------------------------------------------------


def solve_ao(inst: AoInstance, incumbent_objective, budget: float) -> AoSolution | Incumbent:
    """Best route found within `budget` seconds whose objective does not exceed the incumbent.

    Depth-first branch and bound, nearest target first, seeded with the
    anchor route, with a Pareto memo over (stop, visited sites).
    """
    incumbent = Fraction(incumbent_objective)
    anchor = evaluate_route(inst, inst.anchor_route)
    if anchor is None or route_coverage(inst, inst.anchor_route) != inst.full_mask:
        raise RecursiveFeasibilityError(f"anchor route of agent {inst.agent} is infeasible in its refinement problem")
    if anchor.objective > incumbent:
        raise RecursiveFeasibilityError(
            f"anchor route of agent {inst.agent} finishes at {float(anchor.objective)} s, after the incumbent {float(incumbent)} s"
        )
    if not inst.site_ids:
        return evaluate_route(inst, (0,))

    best_route = list(inst.anchor_route)
    best_t = anchor.objective * TIME_TICKS
    deadline = time.monotonic() + max(budget, 0.0)
    full = inst.full_mask
    site_stops = inst.N_v
    targets = site_stops + inst.N_d + inst.N_g
    bits = {s: inst.cover_stop[s] for s in site_stops}
    reach_slack = _ticks_up(SITE_RADIUS * 1000.0 / inst.free_speed)
    memo: dict[tuple[int, int], list[tuple[int, int]]] = {}
    route = [0]
    expanded = 0
    out_of_time = False

    def dominated(key, t, e) -> bool:
        entries = memo.setdefault(key, [])
        for t0, e0 in entries:
            if t0 <= t and e0 >= e:
                return True
        entries[:] = [(t0, e0) for t0, e0 in entries if not (t <= t0 and e >= e0)]
        entries.append((t, e))
        return False

    def bound(i, t, mask) -> int:
        lb = t
        for s in site_stops:
            if not bits[s] & ~mask:
                continue
            lb = max(lb, t + inst.transit_time[i][s] - reach_slack)
        return lb

    def dfs(i: int, t: int, e: int, mask: int) -> None:
        nonlocal best_t, best_route, expanded, out_of_time
        if out_of_time:
            return
        expanded += 1
        if expanded % 256 == 0 and time.monotonic() > deadline:
            out_of_time = True
            return
        if mask == full:
            if t < best_t:
                best_t = t
                best_route = list(route)
            return
        if bound(i, t, mask) >= best_t or dominated((i, mask), t, e):
            return
        moves = []
        for j in targets:
            st = inst.stops[j]
            if st.kind == StopKind.SITE and not bits[j] & ~mask:
                continue
            if st.kind == StopKind.RENDEZVOUS:
                if st.pinned >= best_t or (j + 1 >= len(inst.stops) or not inst.is_ride(j, j + 1)):
                    continue
            got = _step(inst, i, j, t, e)
            if got is None:
                continue
            moves.append((inst.transit_time[i][j], j, got))
        moves.sort(key=lambda m: (m[0], m[1]))
        for _, j, got in moves:
            t1, e1 = got[4], got[5]
            m1 = mask | inst.cover_leg[i][j] | inst.cover_stop[j]
            route.append(j)
            if inst.stops[j].kind == StopKind.RENDEZVOUS:
                # dock and ride one step
                ride = _step(inst, j, j + 1, t1, e1)
                if ride is not None:
                    route.append(j + 1)
                    m2 = m1 | inst.cover_leg[j][j + 1] | inst.cover_stop[j + 1]
                    dfs(j + 1, ride[4], ride[5], m2)
                    route.pop()
            elif inst.stops[j].kind == StopKind.DEPOT:
                if e1 > e - inst.transit_energy[i][j]:
                    dfs(j, t1, e1, m1)
            else:
                dfs(j, t1, e1, m1)
            route.pop()
            if out_of_time:
                return

    dfs(0, 0, inst.energy0, inst.cover_stop[0])
    best = evaluate_route(inst, best_route)
    if best is None or route_coverage(inst, best_route) != full or best.objective > incumbent:
        return Incumbent(inst.agent, incumbent, "no valid route")
    if best.objective == incumbent and tuple(best_route) == inst.anchor_route and anchor.objective == incumbent:
        return Incumbent(inst.agent, incumbent, "anchor is already optimal")
    return best


# -- constraint encoding ----------------------------------------------------


@dataclass
class AoEncoding:
    problem: ConstraintProblem
    route: list
    times: list
    energies: list
    end: int  # stop id standing for "route finished"


def encode_ao(
    inst: AoInstance,
    route: Sequence[int] | None = None,
    length: int | None = None,
    incumbent_objective=None,
) -> AoEncoding:
    """Constraint form of the refinement problem; `route` pins the visiting order."""
    n = len(inst.stops)
    END = n
    L = len(route) if route is not None else (length or len(inst.anchor_route) + len(inst.site_ids) + 1)
    L = max(L, 1)
    gd = Fraction(inst.gamma_d, TIME_TICKS)
    cap = Fraction(inst.charge.capacity, ENERGY_TICKS)
    max_leg = max((max(r) for r in inst.transit_time), default=0)
    t_hi = Fraction(inst.horizon + L * (inst.gamma_d * 2 + max_leg), TIME_TICKS) + 1
    P = ConstraintProblem(f"ao_agent{inst.agent}")
    r = [P.new_int(f"r{k}", 0, END) for k in range(L)]
    g = [P.new_real(f"g{k}", 0, t_hi) for k in range(L)]  # departure
    h = [P.new_real(f"h{k}", 0, cap) for k in range(L)]  # energy on departure
    d = [None] + [P.new_real(f"d{k}", 0, t_hi) for k in range(1, L)]  # arrival
    a = [None] + [P.new_real(f"a{k}", 0, cap) for k in range(1, L)]  # energy on arrival
    chg = [None] + [P.new_bool(f"c{k}") for k in range(1, L)]
    m_hi = inst.horizon // inst.gamma_d + L + 2
    mult = [None] + [P.new_int(f"m{k}", 0, m_hi) for k in range(1, L)] if inst.N_d else None

    P.add(Eq(r[0], 0))
    P.add(lin([(1, g[0])], "=", 0))
    P.add(lin([(1, h[0])], "=", Fraction(inst.energy0, ENERGY_TICKS)))
    if route is not None:
        for k, s in enumerate(route):
            P.add(Eq(r[k], s))

    def pairs(k):
        if route is not None:
            return [(route[k - 1], route[k])]
        return [(i, j) for i in range(n) for j in range(1, n)]

    chords = inst.charge.chords()
    for k in range(1, L):
        P.add(Not(Eq(r[k], 0)))
        P.add(Implies(Eq(r[k - 1], END), Eq(r[k], END)))
        P.add(Implies(Eq(r[k], END), And(lin([(1, g[k]), (-1, g[k - 1])], "=", 0), lin([(1, h[k]), (-1, h[k - 1])], "=", 0))))
        for i, j in pairs(k):
            here = And(Eq(r[k - 1], i), Eq(r[k], j))
            if inst.is_ride(i, j):
                P.add(Implies(here, And(lin([(1, d[k]), (-1, g[k - 1])], "=", gd), lin([(1, a[k]), (-1, h[k - 1])], "=", 0), chg[k])))
            else:
                P.add(
                    Implies(
                        here,
                        And(
                            lin([(1, d[k]), (-1, g[k - 1])], "=", inst.phi(i, j)),
                            lin([(1, a[k]), (-1, h[k - 1])], "=", -inst.psi(i, j)),
                            chg[k] if inst.stops[j].kind == StopKind.DEPOT else Not(chg[k]),
                        ),
                    )
                )
            if route is None:
                # a ride can only follow its own rendezvous
                pass
        # charging bounds the departure energy by every chord of the arrival energy
        for slope, icpt in chords:
            P.add(Implies(chg[k], lin([(1, h[k]), (-slope, a[k])], "<=", icpt)))
        P.add(Implies(Not(chg[k]), Or(Eq(r[k], END), lin([(1, h[k]), (-1, a[k])], "=", 0))))
        for j in range(1, n):
            st = inst.stops[j]
            at = Eq(r[k], j)
            if st.kind == StopKind.RENDEZVOUS:
                P.add(Implies(at, And(lin([(1, g[k])], "=", Fraction(st.pinned, TIME_TICKS)), lin([(1, d[k])], "<=", Fraction(st.pinned, TIME_TICKS)))))
            elif st.kind == StopKind.DEPOT:
                P.add(
                    Implies(
                        at,
                        And(
                            lin([(1, g[k]), (-1, d[k])], ">=", gd),
                            lin([(1, g[k]), (-gd, mult[k])], "=", gd),
                        ),
                    )
                )
            else:
                P.add(Implies(at, lin([(1, g[k]), (-1, d[k])], "=", 0)))

    # every assigned site is reached at a stop or on a leg
    for bit in range(len(inst.site_ids)):
        lits = []
        for k in range(L):
            lits += [Eq(r[k], i) for i in range(n) if inst.cover_stop[i] >> bit & 1]
            if k:
                for i, j in pairs(k):
                    if inst.cover_leg[i][j] >> bit & 1:
                        lits.append(And(Eq(r[k - 1], i), Eq(r[k], j)))
        P.add(Or(*lits))
    if incumbent_objective is not None:
        P.add(lin([(1, g[L - 1])], "<=", Fraction(incumbent_objective)))
    return AoEncoding(P, r, g, h, END)


def decode_route(enc: AoEncoding, model) -> tuple[int, ...]:
    out = []
    for v in enc.route:
        s = model[v]
        if s == enc.end:
            break
        out.append(s)
    return tuple(out)


# -- merging agent refinements into a team plan ------------------------------


class _Mode(str, Enum):
    FLY = "fly"
    WAIT = "wait"
    CHARGE = "charge"
    RIDE = "ride"


@dataclass(frozen=True)
class _Piece:
    t0: float
    t1: float
    p0: Point
    p1: Point
    e0: float
    e1: float
    mode: _Mode


def _pieces_from_solution(inst: AoInstance, sol: AoSolution) -> list[_Piece]:
    out = []
    route = sol.route
    for k in range(1, len(route)):
        i, j = route[k - 1], route[k]
        a, b = inst.stops[i], inst.stops[j]
        t_dep = float(sol.times[k - 1])
        e_dep = float(sol.energies[k - 1])
        if inst.is_ride(i, j):
            out.append(_Piece(t_dep, float(sol.times[k]), a.position, b.position, e_dep, float(sol.energies[k]), _Mode.RIDE))
            continue
        arrive = sol.times[k - 1] + sol.travel_time[k]
        e_arr = float(sol.energies[k - 1] + sol.travel_energy[k])
        if sol.travel_time[k] > 0:
            out.append(_Piece(t_dep, float(arrive), a.position, b.position, e_dep, e_arr, _Mode.FLY))
        if b.kind == StopKind.DEPOT:
            start = sol.times[k] - Fraction(inst.gamma_d, TIME_TICKS)
            if start > arrive:
                out.append(_Piece(float(arrive), float(start), b.position, b.position, e_arr, e_arr, _Mode.WAIT))
            out.append(_Piece(float(start), float(sol.times[k]), b.position, b.position, e_arr, float(sol.energies[k]), _Mode.CHARGE))
        elif sol.times[k] > arrive:
            out.append(_Piece(float(arrive), float(sol.times[k]), b.position, b.position, e_arr, e_arr, _Mode.WAIT))
    return out


def _pieces_from_team(team_plan: Plan, agent: int, until: float) -> list[_Piece]:
    impl = team_plan.implementation
    out = []
    for off, seg in zip(impl.offsets, impl.segments):
        if off >= until - 1e-9:
            break
        a, b = seg.start.vehicles[agent], seg.end.vehicles[agent]
        if a.flag == Flag.UAV_DOCKED:
            mode = _Mode.RIDE
        elif seg.rules[agent] == Rule.CHARGE:
            mode = _Mode.CHARGE
        elif a.position != b.position:
            mode = _Mode.FLY
        else:
            mode = _Mode.WAIT
        out.append(_Piece(off, off + seg.duration, a.position, b.position, a.energy, b.energy, mode))
    return out


def _piece_state(piece: _Piece, t: float, host_pos: Point, model: EnergyModel) -> tuple[Point, float]:
    span = piece.t1 - piece.t0
    f = 0.0 if span <= 0 else min(max((t - piece.t0) / span, 0.0), 1.0)
    if piece.mode == _Mode.RIDE:
        pos = host_pos
    elif f >= 1.0:
        pos = piece.p1
    else:
        pos = lerp(piece.p0, piece.p1, f)
    if piece.mode in (_Mode.CHARGE, _Mode.RIDE):
        if f >= 1.0:
            e = piece.e1
        else:
            e = min(model.integrate_charge(min(max(piece.e0, 0.0), model.uav_capacity), t - piece.t0), piece.e1)
            e = max(e, min(piece.e0, piece.e1))
    elif piece.mode == _Mode.FLY:
        e = piece.e1 if f >= 1.0 else piece.e0 + (piece.e1 - piece.e0) * f
    else:
        e = piece.e0
    return pos, e


@dataclass
class _Track:
    pieces: list[_Piece]
    end: float
    rest: Point
    rest_energy: float

    def at(self, t: float, host_pos: Point, model: EnergyModel) -> tuple[Point, float, bool]:
        """Position, energy and whether the UAV is docked for the segment starting at t."""
        for p in self.pieces:
            if p.t0 <= t < p.t1:
                pos, e = _piece_state(p, t, host_pos, model)
                return pos, e, p.mode == _Mode.RIDE
        for p in reversed(self.pieces):
            if abs(t - p.t1) <= 1e-12 or p.t1 <= t:
                if p.t1 <= t + 1e-12:
                    pos, e = _piece_state(p, p.t1, host_pos, model)
                    if p.t1 < t and p.mode == _Mode.RIDE:
                        pos = self.rest
                    return (self.rest, self.rest_energy, False) if t > self.end else (pos, e, False)
        return self.rest, self.rest_energy, False

    def knots(self) -> set[float]:
        out = set()
        for p in self.pieces:
            out.update((p.t0, p.t1))
        return out


def _track(pieces: list[_Piece], start: Point, e0: float, end: float, model: EnergyModel, host_pos_at) -> _Track:
    if pieces:
        last = pieces[-1]
        host = host_pos_at(last.t1) if last.mode == _Mode.RIDE else None
        pos, e = _piece_state(last, last.t1, host, model)
        return _Track(pieces, end, pos, e)
    return _Track(pieces, end, start, e0)


def _fly_splits(pieces: list[_Piece], sites: Sequence[Point]) -> set[float]:
    out = set()
    for p in pieces:
        if p.mode != _Mode.FLY:
            continue
        for s in sites:
            f, d = project_on_segment(s, p.p0, p.p1)
            if d <= SITE_RADIUS and 0 < f < 1:
                out.add(p.t0 + f * (p.t1 - p.t0))
    return out


def merge_agent_plans(
    team_plan: Plan,
    per_agent: Sequence[AoSolution | Incumbent],
    instances: Sequence[AoInstance],
    sites: Sequence[Point],
    assignment: Sequence[int] | None = None,
) -> Plan:
    """Team plan with the refined UAV routes spliced in; the UGV route is kept.

    Agents whose refinement would break a UGV's energy budget or pad
    capacity fall back to their team-plan route, later dockers first.
    """
    world: World = team_plan.details.S.world
    fleet = world.fleet
    if assignment is None:
        assignment = assign_sites(team_plan, sites, fleet)
    hits = _first_hits(team_plan.implementation, sites, fleet)
    by_agent = {inst.agent: (inst, res) for inst, res in zip(instances, per_agent)}
    improved = [
        a for a, (inst, res) in by_agent.items() if isinstance(res, AoSolution)
    ]

    def first_dock(a):
        inst, res = by_agent[a]
        for k in range(1, len(res.route)):
            if inst.stops[res.route[k]].kind == StopKind.RENDEZVOUS:
                return float(res.times[k])
        return -1.0

    improved.sort(key=lambda a: (first_dock(a), a))
    accepted: list[int] = []
    best = None
    for a in improved:
        trial = _assemble(team_plan, by_agent, accepted + [a], hits, sites, world)
        if trial is not None:
            accepted.append(a)
            best = trial
    if best is None:
        return team_plan
    return best


def _assemble(team_plan: Plan, by_agent, improved: Sequence[int], hits, sites, world: World) -> Plan | None:
    fleet = world.fleet
    model = world.model
    team_impl = team_plan.implementation
    x0 = team_impl.start_state
    origin = x0.time
    uavs = fleet.indices(VehicleKind.UAV)
    ugvs = fleet.indices(VehicleKind.UGV)

    completion = {j: max((g for g, v in hits if v == j), default=0.0) for j in range(len(fleet))}
    tracks: dict[int, _Track] = {}
    for j in uavs:
        host = fleet[j].host
        host_at = (lambda t, h=host: team_impl.state_at(min(t, team_impl.total_duration)).vehicles[h].position) if host is not None else (lambda t: None)
        if j in improved:
            inst, sol = by_agent[j]
            pieces = _pieces_from_solution(inst, sol)
            completion[j] = float(sol.objective)
        else:
            pieces = _pieces_from_team(team_plan, j, completion[j])
        tracks[j] = _track(pieces, x0.vehicles[j].position, x0.vehicles[j].energy, completion[j], model, host_at)
    end = max(completion.values(), default=0.0)
    if end <= 0:
        return None
    knots = {0.0, end}
    knots.update(g for g in team_impl.offsets if g < end)
    for j, tr in tracks.items():
        knots.update(g for g in tr.knots() if 0 <= g < end)
        knots.update(g for g in _fly_splits(tr.pieces, sites) if g < end)
    merged = [0.0]
    for g in sorted(knots):
        if g - merged[-1] > CUT_GAP:
            merged.append(g)
    merged[-1] = end
    knots = merged

    states = []
    for t in knots:
        team_state = team_impl.state_at(min(t, team_impl.total_duration))
        vs = list(team_state.vehicles)
        docked_on: dict[int, int] = {}
        for j in uavs:
            host = fleet[j].host
            host_pos = team_state.vehicles[host].position if host is not None else None
            pos, e, docked = tracks[j].at(t, host_pos, model)
            if t >= end:
                docked = False
            if docked:
                docked_on[host] = docked_on.get(host, 0) + 1
            vs[j] = VehicleState(pos[0], pos[1], e, Flag.UAV_DOCKED if docked else Flag.UAV_FREE)
        for g_ in ugvs:
            n = docked_on.get(g_, 0)
            if n > 2:
                return None
            v = vs[g_]
            vs[g_] = VehicleState(v.x, v.y, v.energy, Flag(n))
        states.append(SystemState(tuple(vs), origin + t))

    # UGV energies follow the new docking schedule
    for g_ in ugvs:
        e = x0.vehicles[g_].energy
        fixed = [states[0]]
        for a, b in zip(states, states[1:]):
            dur = b.time - a.time
            pa, pb = a.vehicles[g_].position, b.vehicles[g_].position
            d = world.road.road_distance(pa, pb)
            if d <= 1e-9 and world.at_depot(pa):
                e = model.ugv_capacity
            else:
                supplied = sum(
                    max(0.0, b.vehicles[i].energy - a.vehicles[i].energy)
                    for i in fleet.hosted_by(g_)
                    if a.vehicles[i].flag == Flag.UAV_DOCKED
                )
                e = e - model.ugv_min_energy(min(d, model.ugv_max_speed * dur / 1000.0), dur) - supplied
            if e < 0:
                return None
            vs = list(b.vehicles)
            v = vs[g_]
            vs[g_] = VehicleState(v.x, v.y, e, v.flag)
            fixed.append(SystemState(tuple(vs), b.time))
        states = fixed

    segs = []
    for a, b in zip(states, states[1:]):
        rules = []
        for j in range(len(fleet)):
            if fleet[j].kind == VehicleKind.UAV:
                t_mid = (a.time + b.time) / 2 - origin
                charging = a.vehicles[j].flag == Flag.UAV_DOCKED or any(
                    p.mode == _Mode.CHARGE and p.t0 <= t_mid < p.t1 for p in tracks[j].pieces
                )
                rules.append(Rule.CHARGE if charging else Rule.LINEAR)
            else:
                rules.append(Rule.LINEAR)
        segs.append(Segment(a, b, b.time - a.time, tuple(rules)))
    impl = Implementation(tuple(segs), model)
    traj = impl.trajectory()
    if first_invalid_step(world, traj) is not None:
        return None
    return Plan(traj, impl, traj.states[-1].time, "ao", team_plan.horizon_steps, team_plan.details)


# -- the solver as used by the planner ------------------------------------------


@dataclass(frozen=True)
class AoOutcome:
    plan: Plan
    instances: tuple[AoInstance, ...]
    results: tuple[AoSolution | Incumbent, ...]


def refine_team_plan(team_plan: Plan, sites: Sequence[Point], budget: float, free_speed: float | None = None) -> AoOutcome:
    """Refine every UAV of a TDO plan and merge; the result never ends later than the input."""
    world: World = team_plan.details.S.world
    fleet = world.fleet
    deadline = time.monotonic() + budget
    assignment = assign_sites(team_plan, sites, fleet)
    hits = _first_hits(team_plan.implementation, sites, fleet)
    uavs = fleet.indices(VehicleKind.UAV)
    team_span = team_plan.implementation.total_duration
    instances, results = [], []
    for n, j in enumerate(uavs):
        inst = extract_agent_subproblem(team_plan, j, sites, free_speed, assignment)
        # a site reached while riding is only credited when the ride ends, so the
        # replayed team route may finish after the first hit; the team end is the real bound
        incumbent = Fraction(max((g for g, v in hits if v == j), default=0.0))
        anchor = evaluate_route(inst, inst.anchor_route)
        if anchor is not None and incumbent < anchor.objective <= Fraction(_ticks_up(team_span), TIME_TICKS):
            incumbent = anchor.objective
        share = max(deadline - time.monotonic(), 0.0) / (len(uavs) - n)
        instances.append(inst)
        results.append(solve_ao(inst, incumbent, share))
    merged = merge_agent_plans(team_plan, results, instances, sites, assignment)
    return AoOutcome(merged, tuple(instances), tuple(results))
