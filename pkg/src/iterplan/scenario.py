"""Scenario files: a YAML description of map, road, depots, fleet and task sites.

Schema (all lengths in km, energies in kJ, times in s)::

    map: [x0, y0, x1, y1]
    road:                       # list of polylines; shared vertices join branches
      - [[x, y], [x, y], ...]
    depots:                     # road vertex indices or on-road coordinates
      - [x, y]
    fleet:
      - {kind: ugv, name: g0, start: [x, y], energy: 25010}
      - {kind: uav, name: a0, host: g0, start: [x, y], energy: 287.7, docked: false}
    sites: [[x, y], ...]
    params:                     # optional, defaults shown in `Params`
      gamma_d: 300
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .geometry import Point, RoadNetwork
from .ts import TaskSiteAssignment
from .vehicles import DEFAULT_MODEL, Fleet, Flag, SystemState, VehicleKind, VehicleSpec, VehicleState
from .world import World


class ScenarioError(ValueError):
    """Schema or invariant violation; `path` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Params:
    gamma_d: float = 300.0
    spacing_road: float = 1.2
    pitch_air: float = 1.5
    B_max_a: int = 20
    B_max_g: int = 100
    hull_padding: float = 0.75
    plan_budget: float = 300.0
    step_budget: float = 300.0
    horizon_steps: int = 48
    seed: int = 0


@dataclass(frozen=True)
class VehicleSetup:
    kind: VehicleKind
    name: str
    start: Point
    energy: float
    host: int | None = None
    docked: bool = False


@dataclass(frozen=True)
class Scenario:
    map_rect: tuple[float, float, float, float]
    road: tuple[tuple[Point, ...], ...]
    depots: tuple[Point, ...]
    fleet: tuple[VehicleSetup, ...]
    sites: tuple[Point, ...]
    params: Params = field(default_factory=Params)
    name: str = "scenario"

    @property
    def road_network(self) -> RoadNetwork:
        return RoadNetwork(self.road)

    def world(self) -> World:
        specs = tuple(VehicleSpec(v.kind, v.name, v.host) for v in self.fleet)
        return World(self.road_network, self.depots, Fleet(specs), DEFAULT_MODEL)

    def assignment(self) -> TaskSiteAssignment:
        return TaskSiteAssignment.from_points(self.sites)

    def initial_state(self) -> SystemState:
        vs = []
        docked = [0] * len(self.fleet)
        for v in self.fleet:
            if v.kind == VehicleKind.UAV and v.docked:
                docked[v.host] += 1
        for j, v in enumerate(self.fleet):
            if v.kind == VehicleKind.UGV:
                flag = Flag(docked[j])
                pos = v.start
            else:
                flag = Flag.UAV_DOCKED if v.docked else Flag.UAV_FREE
                pos = self.fleet[v.host].start if v.docked else v.start
            vs.append(VehicleState(float(pos[0]), float(pos[1]), float(v.energy), flag))
        return SystemState(tuple(vs), 0.0)

    def with_params(self, **kw) -> "Scenario":
        return replace(self, params=replace(self.params, **kw))

    def with_sites(self, sites) -> "Scenario":
        return replace(self, sites=tuple((float(x), float(y)) for x, y in sites))

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "map": list(self.map_rect),
            "road": [[list(p) for p in line] for line in self.road],
            "depots": [list(d) for d in self.depots],
            "fleet": [
                {
                    "kind": v.kind.value,
                    "name": v.name,
                    "start": list(v.start),
                    "energy": v.energy,
                    **({"host": self.fleet[v.host].name, "docked": v.docked} if v.kind == VehicleKind.UAV else {}),
                }
                for v in self.fleet
            ],
            "sites": [list(s) for s in self.sites],
            "params": {f.name: getattr(self.params, f.name) for f in fields(Params)},
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _point(value, path: str) -> Point:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ScenarioError(path, "expected [x, y]")
    try:
        return (float(value[0]), float(value[1]))
    except (TypeError, ValueError):
        raise ScenarioError(path, "coordinates must be numbers") from None


def _require(data: dict, key: str, path: str = ""):
    if key not in data:
        raise ScenarioError(f"{path}{key}", "missing")
    return data[key]


def parse_scenario(data: Any, name: str = "scenario") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "expected a mapping")
    rect = _require(data, "map")
    if not isinstance(rect, (list, tuple)) or len(rect) != 4:
        raise ScenarioError("map", "expected [x0, y0, x1, y1]")
    rect = tuple(float(v) for v in rect)
    if rect[2] <= rect[0] or rect[3] <= rect[1]:
        raise ScenarioError("map", "empty rectangle")

    raw_road = _require(data, "road")
    if not isinstance(raw_road, list) or not raw_road:
        raise ScenarioError("road", "expected a non-empty list of polylines")
    if all(isinstance(p, (list, tuple)) and len(p) == 2 and not isinstance(p[0], (list, tuple)) for p in raw_road):
        raw_road = [raw_road]  # a single polyline
    road = []
    for i, line in enumerate(raw_road):
        if not isinstance(line, list) or len(line) < 2:
            raise ScenarioError(f"road[{i}]", "polyline needs at least two vertices")
        road.append(tuple(_point(p, f"road[{i}][{j}]") for j, p in enumerate(line)))
    road = tuple(road)
    net = RoadNetwork(road)

    depots = []
    for i, d in enumerate(data.get("depots", [])):
        if isinstance(d, int):
            if not 0 <= d < len(net.vertices):
                raise ScenarioError(f"depots[{i}]", f"road vertex index {d} out of range")
            depots.append(net.vertices[d])
        else:
            p = _point(d, f"depots[{i}]")
            if not net.on_road(p):
                raise ScenarioError(f"depots[{i}]", f"depot {p} is not on the road")
            depots.append(p)

    raw_fleet = _require(data, "fleet")
    if not isinstance(raw_fleet, list) or not raw_fleet:
        raise ScenarioError("fleet", "fleet must be a non-empty list")
    names = {}
    for i, v in enumerate(raw_fleet):
        if not isinstance(v, dict):
            raise ScenarioError(f"fleet[{i}]", "expected a mapping")
        names[str(v.get("name", f"v{i}"))] = i
    fleet = []
    for i, v in enumerate(raw_fleet):
        path = f"fleet[{i}]"
        try:
            kind = VehicleKind(str(_require(v, "kind", path + ".")).lower())
        except ValueError:
            raise ScenarioError(path + ".kind", "expected 'ugv' or 'uav'") from None
        vname = str(v.get("name", f"v{i}"))
        cap = DEFAULT_MODEL.capacity(kind)
        energy = float(v.get("energy", cap))
        if not 0 <= energy <= cap:
            raise ScenarioError(path + ".energy", f"must lie in [0, {cap}]")
        host = None
        docked = bool(v.get("docked", False))
        if kind == VehicleKind.UAV:
            h = v.get("host")
            if h is None:
                raise ScenarioError(path + ".host", "UAVs need a host UGV")
            host = names.get(str(h)) if not isinstance(h, int) else h
            if host is None or not 0 <= host < len(raw_fleet) or str(raw_fleet[host].get("kind", "")).lower() != "ugv":
                raise ScenarioError(path + ".host", f"unknown host UGV {h!r}")
        start = v.get("start")
        if start is None:
            if host is None:
                raise ScenarioError(path + ".start", "missing")
            start = raw_fleet[host].get("start")
        start = _point(start, path + ".start")
        if kind == VehicleKind.UGV and not net.on_road(start):
            raise ScenarioError(path + ".start", "UGV must start on the road")
        fleet.append(VehicleSetup(kind, vname, start, energy, host, docked))
    for h in {v.host for v in fleet if v.docked}:
        if sum(1 for v in fleet if v.docked and v.host == h) > 2:
            raise ScenarioError("fleet", f"more than two UAVs docked on {fleet[h].name}")

    sites = []
    for i, s in enumerate(data.get("sites", [])):
        p = _point(s, f"sites[{i}]")
        if not (rect[0] <= p[0] <= rect[2] and rect[1] <= p[1] <= rect[3]):
            raise ScenarioError(f"sites[{i}]", "outside the map")
        sites.append(p)

    raw_params = data.get("params", {}) or {}
    if not isinstance(raw_params, dict):
        raise ScenarioError("params", "expected a mapping")
    known = {f.name: f.type for f in fields(Params)}
    kw = {}
    for k, val in raw_params.items():
        if k not in known:
            raise ScenarioError(f"params.{k}", "unknown parameter")
        default = getattr(Params(), k)
        try:
            kw[k] = type(default)(val)
        except (TypeError, ValueError):
            raise ScenarioError(f"params.{k}", f"expected {type(default).__name__}") from None
    params = Params(**kw)
    if params.gamma_d <= 0:
        raise ScenarioError("params.gamma_d", "must be positive")
    return Scenario(rect, road, tuple(depots), tuple(fleet), tuple(sites), params, str(data.get("name", name)))


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists() and path.with_suffix(".yaml").exists():
        path = path.with_suffix(".yaml")
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(str(path), "file not found") from None
    except yaml.YAMLError as exc:
        raise ScenarioError(str(path), f"not valid YAML: {exc}") from None
    return parse_scenario(data, name=path.stem)


def reference_path() -> Path:
    return Path(__file__).parent / "scenarios" / "reference_y_road.yaml"


def reference_scenario() -> Scenario:
    return load_scenario(reference_path())

