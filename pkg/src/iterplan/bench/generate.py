"""Random desk-scale scenarios: a short polyline road with depots at both ends."""

from __future__ import annotations

import math

import numpy as np

from ..geometry import Point, dist
from ..sampler import build_sampled_system
from ..scenario import Params, Scenario, VehicleSetup
from ..vehicles import DEFAULT_MODEL, VehicleKind

DESK_MAP = (0.0, 0.0, 8.0, 8.0)


def point_along(line: tuple[Point, ...], s: float) -> Point:
    """Point at arc length `s` (km) along a polyline, clamped to its ends."""
    for a, b in zip(line, line[1:]):
        d = dist(a, b)
        if s <= d:
            t = s / d if d else 0.0
            return (round(a[0] + t * (b[0] - a[0]), 6), round(a[1] + t * (b[1] - a[1]), 6))
        s -= d
    return line[-1]


def polyline_length(line) -> float:
    return sum(dist(a, b) for a, b in zip(line, line[1:]))


def random_road(rng: np.random.Generator, length: tuple[float, float] = (3.0, 5.0), bends: int = 1) -> tuple[Point, ...]:
    x0, y0, x1, y1 = DESK_MAP
    total = rng.uniform(*length)
    pieces = rng.dirichlet(np.ones(bends + 1)) * total
    heading = rng.uniform(0, 2 * math.pi)
    pts = [(round(rng.uniform(x0 + 2.5, x1 - 2.5), 2), round(rng.uniform(y0 + 2.5, y1 - 2.5), 2))]
    for piece in pieces:
        for _ in range(20):
            x = pts[-1][0] + piece * math.cos(heading)
            y = pts[-1][1] + piece * math.sin(heading)
            if x0 + 0.5 <= x <= x1 - 0.5 and y0 + 0.5 <= y <= y1 - 0.5:
                break
            heading += rng.uniform(0.5, 1.5)
        else:
            x, y = np.clip(x, x0 + 0.5, x1 - 0.5), np.clip(y, y0 + 0.5, y1 - 0.5)
        pts.append((round(float(x), 2), round(float(y), 2)))
        heading += rng.uniform(-1.0, 1.0)
    return tuple(p for i, p in enumerate(pts) if i == 0 or p != pts[i - 1])


def desk_scenario(
    seed: int,
    n_sites: int = 4,
    n_groups: int = 1,
    off_road: float = 0.5,
    params: Params | None = None,
) -> Scenario:
    """Deterministic scenario for `seed`; groups of one UGV plus two UAVs start evenly along the road."""
    rng = np.random.default_rng(seed)
    road = random_road(rng)
    length = polyline_length(road)
    depots = (road[0], road[-1])
    fleet: list[VehicleSetup] = []
    for g in range(n_groups):
        start = point_along(road, length * g / max(n_groups, 1)) if n_groups > 1 else road[0]
        host = len(fleet)
        fleet.append(VehicleSetup(VehicleKind.UGV, f"ugv{g}", start, DEFAULT_MODEL.ugv_capacity))
        for u in range(2):
            fleet.append(VehicleSetup(VehicleKind.UAV, f"uav{2 * g + u}", start, DEFAULT_MODEL.uav_capacity, host, False))
    p = params or Params(plan_budget=60.0, step_budget=60.0, horizon_steps=24)
    sc = Scenario(DESK_MAP, (road,), depots, tuple(fleet), (), p, f"desk_s{seed}_g{n_groups}_n{n_sites}")
    return sc.with_sites(random_sites(rng, sc, n_sites, off_road))


def random_sites(rng: np.random.Generator, scenario: Scenario, n: int, off_road: float = 0.5) -> list[Point]:
    """Sites on the road (anywhere along it) or, with probability `off_road`, on an air node or air edge midpoint."""
    S = build_sampled_system(scenario)
    road = scenario.road[0]
    length = polyline_length(road)
    air = [S.pos(i) for i in range(len(S.nodes)) if i not in set(S.road_ids)]
    air += [((S.pos(i)[0] + S.pos(j)[0]) / 2, (S.pos(i)[1] + S.pos(j)[1]) / 2) for i, nb in S.adjacency_a.items() for j in nb if i < j]
    out: list[Point] = []
    for _ in range(n):
        if air and rng.uniform() < off_road:
            q = air[int(rng.integers(len(air)))]
        else:
            q = point_along(road, rng.uniform(0, length))
        out.append((round(float(q[0]), 6), round(float(q[1]), 6)))
    return out
