"""Sampled (discrete) transition systems: road nodes, air grid, energy levels.

A `SampledSystem` is the solver-facing state space. Its transition relation
is the continuous oracle restricted to sampled states, so every discrete plan
is physically executable by construction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from shapely.geometry import MultiPoint, Point as ShapelyPoint, box

from .geometry import Point, RoadNetwork, dist, point_key, project_on_segment
from .ts import Implementation, Label, site_hit_times
from .vehicles import EnergyModel, Flag, SystemState, VehicleKind, VehicleState
from .world import World

MERGE_RADIUS = 0.05  # km, lattice points this close to a road node are merged into it


class NodeKind(str, Enum):
    ROAD = "road"
    AIR = "air"
    DEPOT = "depot"


class VehicleCannotMoveError(ValueError):
    """One move step costs more energy levels than the battery holds."""


class InjectionError(RuntimeError):
    """An anchor state could not be represented in the sampled system."""


@dataclass(frozen=True)
class SpatialNode:
    id: int
    pos: Point
    kind: NodeKind

    @property
    def on_road(self) -> bool:
        return self.kind in (NodeKind.ROAD, NodeKind.DEPOT)


# -- road ---------------------------------------------------------------------


def build_road_graph(
    road: RoadNetwork | Sequence[Sequence[Point]], spacing: float, depots: Sequence[Point] = ()
) -> tuple[list[SpatialNode], list[tuple[int, int]]]:
    """Subdivide every road segment into equal pieces no longer than `spacing`."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    net = road if isinstance(road, RoadNetwork) else RoadNetwork(tuple(tuple(p) for p in road))
    pts: list[Point] = []
    index: dict[tuple[float, float], int] = {}

    def add(p: Point) -> int:
        k = point_key(p)
        if k not in index:
            index[k] = len(pts)
            pts.append((float(p[0]), float(p[1])))
        return index[k]

    edges: set[tuple[int, int]] = set()
    for ia, ib in net.segments:
        a, b = net.vertices[ia], net.vertices[ib]
        n = max(1, math.ceil(dist(a, b) / spacing - 1e-9))
        ids = [add((a[0] + (b[0] - a[0]) * i / n, a[1] + (b[1] - a[1]) * i / n)) for i in range(n + 1)]
        edges.update((min(u, v), max(u, v)) for u, v in zip(ids, ids[1:]))

    depot_ids = set()
    for d in depots:
        near = [i for i, p in enumerate(pts) if dist(p, d) <= 1e-9]
        if near:
            depot_ids.add(near[0])
            continue
        u, v = _containing_edge(pts, edges, d)
        w = add(d)
        edges.discard((u, v))
        edges.update({(min(u, w), max(u, w)), (min(v, w), max(v, w))})
        depot_ids.add(w)
    nodes = [SpatialNode(i, p, NodeKind.DEPOT if i in depot_ids else NodeKind.ROAD) for i, p in enumerate(pts)]
    return nodes, sorted(edges)


def _containing_edge(pts: list[Point], edges: Iterable[tuple[int, int]], p: Point, tol: float = 0.001) -> tuple[int, int]:
    best = None
    for u, v in edges:
        t, d = project_on_segment(p, pts[u], pts[v])
        if d <= tol and (best is None or d < best[0]):
            best = (d, u, v)
    if best is None:
        raise InjectionError(f"point {p} is not on any road edge")
    return best[1], best[2]


def build_road_nodes(road, spacing: float, depots: Sequence[Point] = ()) -> list[SpatialNode]:
    return build_road_graph(road, spacing, depots)[0]


# -- air grid -------------------------------------------------------------------


def _lattice_basis(pitch: float, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    a1 = np.array([c, s]) * pitch
    a2 = np.array([c * 0.5 - s * math.sqrt(3) / 2, s * 0.5 + c * math.sqrt(3) / 2]) * pitch
    return np.stack([a1, a2], axis=1)  # columns are basis vectors


def _coincidences(targets: np.ndarray, basis: np.ndarray, offsets: np.ndarray, radius: float) -> np.ndarray:
    """Number of targets within `radius` of the lattice, for each offset."""
    inv = np.linalg.inv(basis)
    rel = targets[None, :, :] - offsets[:, None, :]  # (O, N, 2)
    frac = rel @ inv.T
    base = np.floor(frac)
    best = np.full(frac.shape[:2], np.inf)
    for du in (0.0, 1.0):
        for dv in (0.0, 1.0):
            cell = base + np.array([du, dv])
            d = np.linalg.norm((frac - cell) @ basis.T, axis=2)
            best = np.minimum(best, d)
    return (best <= radius).sum(axis=1)


def orient_lattice(targets: Sequence[Point], pitch: float, angle_step_deg: float = 1.0, offset_step: float = 0.05) -> tuple[float, np.ndarray]:
    """Rotation (radians) and offset of a triangular lattice that passes through most targets."""
    pts = np.asarray(targets, dtype=float).reshape(-1, 2)
    n_off = max(1, int(round(pitch / offset_step)))
    grid = np.array([(i / n_off, j / n_off) for i in range(n_off) for j in range(n_off)])
    best_key, best = None, (0.0, np.zeros(2))
    for k in range(int(round(60 / angle_step_deg))):
        theta = math.radians(k * angle_step_deg)
        basis = _lattice_basis(pitch, theta)
        offsets = grid @ basis.T
        counts = _coincidences(pts, basis, offsets, MERGE_RADIUS) if len(pts) else np.zeros(len(offsets))
        i = int(np.argmax(counts))  # first maximum: lexicographic offset tie-break
        key = int(counts[i])
        if best_key is None or key > best_key:
            best_key, best = key, (theta, offsets[i])
    return best


def build_air_grid(
    map_rect: tuple[float, float, float, float],
    pitch: float,
    road_nodes: Sequence[SpatialNode],
    depots: Sequence[Point] = (),
    padding: float = 0.75,
) -> list[SpatialNode]:
    """Road nodes followed by triangular-lattice nodes inside the padded road hull."""
    anchors = [n.pos for n in road_nodes] + list(depots)
    if not anchors:
        raise ValueError("cannot build an air grid around an empty road")
    hull = MultiPoint(anchors).convex_hull.buffer(padding)
    if hull.is_empty or hull.area == 0:
        raise ValueError("empty hull")
    region = hull.intersection(box(*map_rect))
    theta, origin = orient_lattice([n.pos for n in road_nodes], pitch)
    basis = _lattice_basis(pitch, theta)
    inv = np.linalg.inv(basis)
    x0, y0, x1, y1 = region.bounds
    corners = np.array([[x0, y0], [x0, y1], [x1, y0], [x1, y1]]) - origin
    frac = corners @ inv.T
    lo, hi = np.floor(frac.min(axis=0)) - 1, np.ceil(frac.max(axis=0)) + 1
    nodes = list(road_nodes)
    road_xy = np.array([n.pos for n in road_nodes])
    extra = []
    for i in range(int(lo[0]), int(hi[0]) + 1):
        for j in range(int(lo[1]), int(hi[1]) + 1):
            p = origin + basis @ np.array([i, j])
            if not region.covers(ShapelyPoint(p)):
                continue
            if len(road_xy) and np.min(np.linalg.norm(road_xy - p, axis=1)) <= MERGE_RADIUS:
                continue
            extra.append((round(float(p[0]), 9), round(float(p[1]), 9)))
    for p in sorted(extra):
        nodes.append(SpatialNode(len(nodes), p, NodeKind.AIR))
    return nodes


# -- energy levels -------------------------------------------------------------


@dataclass(frozen=True)
class QuantizedEnergy:
    B_max_a: int
    B_max_g: int
    B_move_a: int
    B_move_g: int
    B_charge_a: int
    B_idle_g: int  # UGV levels drawn per step standing still
    B_charge_g: int  # UGV levels drawn per step for each UAV charging on it
    charge_to: tuple[int, ...]  # UAV level after one charging step, indexed by start level
    uav_level: float  # kJ per UAV level
    ugv_level: float  # kJ per UGV level

    def uav_energy(self, level: int) -> float:
        return level * self.uav_level

    def ugv_energy(self, level: int) -> float:
        return level * self.ugv_level

    def uav_floor(self, energy: float) -> int:
        return max(0, min(self.B_max_a, math.floor(energy / self.uav_level + 1e-9)))

    def ugv_floor(self, energy: float) -> int:
        return max(0, min(self.B_max_g, math.floor(energy / self.ugv_level + 1e-9)))


def quantize_energy(
    model: EnergyModel, cruise_v_a: float, cruise_v_g: float, gamma_d: float, B_max_a: int = 20, B_max_g: int = 100
) -> QuantizedEnergy:
    """Integer level counts per step: depletion rounded up, charging rounded down."""
    if gamma_d <= 0:
        raise ValueError("gamma_d must be positive")
    if B_max_a < 1 or B_max_g < 1:
        raise ValueError("level counts must be positive")
    da = model.uav_capacity / B_max_a
    dg = model.ugv_capacity / B_max_g
    move_a = math.ceil(model.move_energy(VehicleKind.UAV, cruise_v_a, gamma_d) / da)
    move_g = math.ceil(model.move_energy(VehicleKind.UGV, cruise_v_g, gamma_d) / dg)
    gain = model.integrate_charge(0.0, gamma_d)
    charge_a = math.floor(gain / da)
    idle_g = math.ceil(model.ugv_idle_power * gamma_d / 1000.0 / dg)
    charge_g = math.ceil(gain / dg)
    if move_a > B_max_a:
        raise VehicleCannotMoveError(f"one UAV move needs {move_a} of {B_max_a} levels")
    if move_g > B_max_g:
        raise VehicleCannotMoveError(f"one UGV move needs {move_g} of {B_max_g} levels")
    table = tuple(
        min(B_max_a, max(b, math.floor(model.integrate_charge(b * da, gamma_d) / da)), b + charge_a)
        for b in range(B_max_a + 1)
    )
    return QuantizedEnergy(B_max_a, B_max_g, max(move_a, 1), max(move_g, 1), charge_a, idle_g, charge_g, table, da, dg)


# -- the sampled system --------------------------------------------------------


@dataclass
class SampledSystem:
    world: World
    nodes: list[SpatialNode]
    road_ids: list[int]
    adjacency_g: dict[int, tuple[int, ...]]
    adjacency_a: dict[int, tuple[int, ...]]
    gamma_d: float
    levels: QuantizedEnergy
    depot_ids: list[int]
    cruise_v_a: float
    cruise_v_g: float
    time_origin: float = 0.0
    extra_energies: frozenset[float] = field(default_factory=frozenset)
    extra_times: frozenset[float] = field(default_factory=frozenset)

    @property
    def road_nodes(self) -> list[SpatialNode]:
        return [self.nodes[i] for i in self.road_ids]

    @property
    def air_nodes(self) -> list[SpatialNode]:
        return self.nodes

    @cached_property
    def _by_pos(self) -> dict[tuple[float, float], int]:
        return {point_key(n.pos): n.id for n in self.nodes}

    def node_at(self, p: Point) -> int | None:
        return self._by_pos.get(point_key(p))

    def pos(self, i: int) -> Point:
        return self.nodes[i].pos

    def node_positions(self) -> list[Point]:
        return [n.pos for n in self.nodes]

    def directed_edges(self) -> list[tuple[Point, Point]]:
        pairs = set()
        for adj in (self.adjacency_a, self.adjacency_g):
            for u, vs in adj.items():
                pairs.update((u, v) for v in vs)
        return [(self.nodes[u].pos, self.nodes[v].pos) for u, v in sorted(pairs)]

    def is_depot(self, i: int) -> bool:
        return i in self.depot_ids

    def _energy_sampled(self, kind: VehicleKind, e: float) -> bool:
        step = self.levels.ugv_level if kind == VehicleKind.UGV else self.levels.uav_level
        q = e / step
        if abs(q - round(q)) <= 1e-9 and -1e-9 <= e:
            return True
        return any(abs(e - v) <= 1e-9 for v in self.extra_energies)

    def _time_sampled(self, t: float) -> bool:
        q = (t - self.time_origin) / self.gamma_d
        if abs(q - round(q)) <= 1e-9:
            return True
        return any(abs(t - v) <= 1e-9 for v in self.extra_times)

    def contains_state(self, x: SystemState) -> bool:
        if len(x.vehicles) != len(self.world.fleet) or not self._time_sampled(x.time):
            return False
        road = set(self.road_ids)
        for spec, v in zip(self.world.fleet.vehicles, x.vehicles):
            i = self.node_at(v.position)
            if i is None or (spec.kind == VehicleKind.UGV and i not in road):
                return False
            if not self._energy_sampled(spec.kind, v.energy):
                return False
        return True

    def is_transition(self, x: SystemState, label: Label | float, x_next: SystemState) -> bool:
        return self.contains_state(x) and self.contains_state(x_next) and self.world.is_transition(x, label, x_next)

    # convenience views used by the encoders
    @cached_property
    def road_index(self) -> dict[int, int]:
        return {nid: k for k, nid in enumerate(self.road_ids)}


def _air_adjacency(nodes: Sequence[SpatialNode], reach: float) -> dict[int, tuple[int, ...]]:
    xy = np.array([n.pos for n in nodes])
    d = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=2)
    out = {}
    for i in range(len(nodes)):
        out[i] = tuple(int(j) for j in np.nonzero((d[i] <= reach + 1e-9) & (np.arange(len(nodes)) != i))[0])
    return out


def _road_adjacency(n: int, edges: Iterable[tuple[int, int]]) -> dict[int, tuple[int, ...]]:
    adj: dict[int, set[int]] = {i: set() for i in range(n)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    return {i: tuple(sorted(s)) for i, s in adj.items()}


def build_sampled_system(
    scenario,
    gamma_d: float | None = None,
    anchor: Implementation | None = None,
    extra_states: Sequence[SystemState] = (),
    time_origin: float | None = None,
) -> SampledSystem:
    """Discretize `scenario`; inject anchor and extra states so they stay representable."""
    p = scenario.params
    gamma_d = float(gamma_d if gamma_d is not None else p.gamma_d)
    if gamma_d <= 0:
        raise ValueError("gamma_d must be positive")
    world = scenario.world()
    road_nodes, road_edges = build_road_graph(world.road, p.spacing_road, world.depots)
    air = build_air_grid(scenario.map_rect, p.pitch_air, road_nodes, world.depots, p.hull_padding)
    v_g = p.spacing_road * 1000.0 / gamma_d
    v_a = p.pitch_air * 1000.0 / gamma_d
    levels = quantize_energy(world.model, v_a, v_g, gamma_d, p.B_max_a, p.B_max_g)

    injected = list(extra_states)
    if anchor is not None:
        injected += _anchor_states(anchor, scenario, gamma_d)
    if time_origin is None:
        time_origin = injected[0].time if extra_states else 0.0

    pts = [n.pos for n in air]
    kinds = [n.kind for n in air]
    road_set = set(range(len(road_nodes)))
    edges = set(road_edges)
    extra_e, extra_t = set(), set()
    index = {point_key(q): i for i, q in enumerate(pts)}
    for x in injected:
        extra_t.add(float(x.time))
        for spec, v in zip(world.fleet.vehicles, x.vehicles):
            extra_e.add(float(v.energy))
            k = point_key(v.position)
            if k in index:
                if spec.kind == VehicleKind.UGV and index[k] not in road_set:
                    raise InjectionError(f"UGV state at {v.position} coincides with an air-only node")
                continue
            w = len(pts)
            pts.append(v.position)
            index[k] = w
            if spec.kind == VehicleKind.UGV:
                u, t = _containing_edge(pts, edges, v.position)
                edges.discard((u, t))
                edges.update({(min(u, w), max(u, w)), (min(t, w), max(t, w))})
                road_set.add(w)
                kinds.append(NodeKind.ROAD)
            else:
                kinds.append(NodeKind.AIR)

    # road nodes take the ids 0..len(road)-1 in the plain system; injected road nodes keep their later ids
    nodes = [SpatialNode(i, q, kinds[i]) for i, q in enumerate(pts)]
    road_ids = sorted(road_set)
    depot_ids = [n.id for n in nodes if n.kind == NodeKind.DEPOT]
    adjacency_g = _road_adjacency(len(nodes), edges)
    adjacency_g = {i: adjacency_g[i] for i in road_ids}
    adjacency_a = _air_adjacency(nodes, v_a * gamma_d / 1000.0)
    return SampledSystem(
        world=world,
        nodes=nodes,
        road_ids=road_ids,
        adjacency_g=adjacency_g,
        adjacency_a=adjacency_a,
        gamma_d=gamma_d,
        levels=levels,
        depot_ids=depot_ids,
        cruise_v_a=v_a,
        cruise_v_g=v_g,
        time_origin=float(time_origin),
        extra_energies=frozenset(extra_e),
        extra_times=frozenset(extra_t),
    )


def enumerate_states(S: SampledSystem, steps: int = 2) -> list[SystemState]:
    """Every plain sampled state at the first `steps` time samples; only sensible for tiny systems."""
    fleet = S.world.fleet
    q = S.levels
    per_vehicle = []
    for spec in fleet.vehicles:
        ids = S.road_ids if spec.kind == VehicleKind.UGV else range(len(S.nodes))
        top = q.B_max_g if spec.kind == VehicleKind.UGV else q.B_max_a
        energy = q.ugv_energy if spec.kind == VehicleKind.UGV else q.uav_energy
        flags = (Flag.UGV_NONE_DOCKED,) if spec.kind == VehicleKind.UGV else (Flag.UAV_FREE, Flag.UAV_DOCKED)
        per_vehicle.append([(S.pos(i), energy(b), f) for i in ids for b in range(top + 1) for f in flags])
    out = []
    for combo in itertools.product(*per_vehicle):
        docked = [0] * len(fleet)
        ok = True
        for j, (spec, (p, _, f)) in enumerate(zip(fleet.vehicles, combo)):
            if f == Flag.UAV_DOCKED:
                if spec.host is None or combo[spec.host][0] != p:
                    ok = False
                    break
                docked[spec.host] += 1
        if not ok or max(docked, default=0) > 2:
            continue
        vs = tuple(
            VehicleState(p[0], p[1], e, Flag(docked[j]) if spec.kind == VehicleKind.UGV else f)
            for j, (spec, (p, e, f)) in enumerate(zip(fleet.vehicles, combo))
        )
        out.extend(SystemState(vs, S.time_origin + k * S.gamma_d) for k in range(steps))
    return out


def _anchor_states(anchor: Implementation, scenario, gamma_d: float) -> list[SystemState]:
    offsets = set(anchor.offsets)
    k = 0
    while k * gamma_d <= anchor.total_duration + 1e-9:
        offsets.add(min(k * gamma_d, anchor.total_duration))
        k += 1
    for site in scenario.sites:
        offsets.update(site_hit_times(anchor, site, resolution=gamma_d))
    return [anchor.state_at(g) for g in sorted(offsets)]


def conservatism_violations(S: SampledSystem) -> list[str]:
    """Edges or levels where the quantized model is more optimistic than physics."""
    m, q = S.world.model, S.levels
    out = []
    move_a = q.B_move_a * q.uav_level
    for u, vs in S.adjacency_a.items():
        for v in vs:
            d = dist(S.pos(u), S.pos(v))
            need = m.travel_energy(VehicleKind.UAV, d, S.cruise_v_a)
            if move_a < need:
                out.append(f"UAV edge {u}->{v}: {move_a} < {need}")
    move_g = q.B_move_g * q.ugv_level
    for u, vs in S.adjacency_g.items():
        for v in vs:
            d = dist(S.pos(u), S.pos(v))
            drive = d * 1000.0 / S.cruise_v_g
            need = m.travel_energy(VehicleKind.UGV, d, S.cruise_v_g) + m.ugv_idle_power * max(S.gamma_d - drive, 0) / 1000.0
            if move_g < need:
                out.append(f"UGV edge {u}->{v}: {move_g} < {need}")
    if q.B_idle_g * q.ugv_level < m.ugv_idle_power * S.gamma_d / 1000.0:
        out.append("UGV idle draw")
    gain = m.integrate_charge(0.0, S.gamma_d)
    if q.B_charge_g * q.ugv_level < gain:
        out.append("UGV charge supply")
    for b, to in enumerate(q.charge_to):
        e0 = b * q.uav_level
        if to * q.uav_level - e0 > m.integrate_charge(e0, S.gamma_d) - e0:
            out.append(f"UAV charge from level {b}")
    return out
