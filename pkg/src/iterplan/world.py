"""The continuous multi-vehicle system: state invariants and the transition oracle.

The oracle accepts every transition whose end state is dominated (in the
energy/time partial order) by some physically attainable end state. This
closure is what makes the system and all its samplings monotone.
"""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import Point, RoadNetwork, dist
from .ts import SITE_RADIUS, Label
from .vehicles import DEFAULT_MODEL, EnergyModel, Fleet, Flag, SystemState, VehicleKind

ENERGY_TOL = 1e-6  # kJ
COLOCATION_TOL = 1e-6  # km


@dataclass(frozen=True)
class World:
    road: RoadNetwork
    depots: tuple[Point, ...]
    fleet: Fleet
    model: EnergyModel = DEFAULT_MODEL

    def at_depot(self, p: Point) -> bool:
        return any(dist(p, d) <= SITE_RADIUS for d in self.depots)

    def state_violation(self, x: SystemState) -> str | None:
        """Why `x` breaks a state invariant, or None."""
        if len(x.vehicles) != len(self.fleet):
            return "fleet size mismatch"
        if x.time < 0:
            return "negative time"
        docked_on: dict[int, int] = {}
        for j, (spec, v) in enumerate(zip(self.fleet.vehicles, x.vehicles)):
            cap = self.model.capacity(spec.kind)
            if v.energy < -ENERGY_TOL or v.energy > cap + ENERGY_TOL:
                return f"vehicle {j} energy {v.energy} out of range"
            if spec.kind == VehicleKind.UGV:
                if v.flag not in (Flag.UGV_NONE_DOCKED, Flag.UGV_ONE_DOCKED, Flag.UGV_TWO_DOCKED):
                    return f"vehicle {j} carries a UAV flag"
                if not self.road.on_road(v.position):
                    return f"UGV {j} off road"
            else:
                if v.flag not in (Flag.UAV_FREE, Flag.UAV_DOCKED):
                    return f"vehicle {j} carries a UGV flag"
                if v.flag == Flag.UAV_DOCKED:
                    if spec.host is None:
                        return f"UAV {j} docked without a host"
                    if dist(v.position, x.vehicles[spec.host].position) > COLOCATION_TOL:
                        return f"docked UAV {j} away from its host"
                    docked_on[spec.host] = docked_on.get(spec.host, 0) + 1
        for j in self.fleet.indices(VehicleKind.UGV):
            if int(x.vehicles[j].flag) != docked_on.get(j, 0):
                return f"UGV {j} flag disagrees with docked UAV count"
        return None

    def best_energy(self, x: SystemState, duration: float, x_next: SystemState, j: int) -> float | None:
        """Highest end energy vehicle j can reach, or None if its motion is infeasible."""
        spec = self.fleet[j]
        a, b = x.vehicles[j], x_next.vehicles[j]
        m = self.model
        slack = 1e-9
        if spec.kind == VehicleKind.UGV:
            d = self.road.road_distance(a.position, b.position)
            if d * 1000.0 > m.ugv_max_speed * duration * (1 + slack) + 1e-9:
                return None
            if d <= 1e-9 and self.at_depot(a.position):
                return m.ugv_capacity
            supplied = sum(
                max(0.0, x_next.vehicles[i].energy - x.vehicles[i].energy)
                for i in self.fleet.hosted_by(j)
                if x.vehicles[i].flag == Flag.UAV_DOCKED
            )
            return a.energy - m.ugv_min_energy(min(d, m.ugv_max_speed * duration / 1000.0), duration) - supplied
        if a.flag == Flag.UAV_DOCKED:
            host = x_next.vehicles[spec.host]
            if dist(b.position, host.position) > COLOCATION_TOL:
                return None
            return m.integrate_charge(min(max(a.energy, 0.0), m.uav_capacity), duration)
        d = dist(a.position, b.position)
        if d * 1000.0 > m.uav_max_speed * duration * (1 + slack) + 1e-9:
            return None
        if d <= 1e-9:
            if self.at_depot(a.position):
                return m.integrate_charge(min(max(a.energy, 0.0), m.uav_capacity), duration)
            return a.energy
        return a.energy - m.uav_min_flight_energy(min(d, m.uav_max_speed * duration / 1000.0), duration)

    def is_transition(self, x: SystemState, label: Label | float, x_next: SystemState) -> bool:
        duration = label.duration if isinstance(label, Label) else float(label)
        if duration <= 0 or len(x.vehicles) != len(x_next.vehicles):
            return False
        if x_next.time < x.time + duration - 1e-9:
            return False
        if self.state_violation(x) or self.state_violation(x_next):
            return False
        for j in range(len(self.fleet)):
            best = self.best_energy(x, duration, x_next, j)
            if best is None or x_next.vehicles[j].energy > best + ENERGY_TOL:
                return False
        return True

    def first_violation(self, x: SystemState, label: Label | float, x_next: SystemState) -> str | None:
        """Human-readable reason `is_transition` rejects the step."""
        duration = label.duration if isinstance(label, Label) else float(label)
        if x_next.time < x.time + duration - 1e-9:
            return "time does not advance by the label"
        for s in (x, x_next):
            if (why := self.state_violation(s)) is not None:
                return why
        for j in range(len(self.fleet)):
            best = self.best_energy(x, duration, x_next, j)
            if best is None:
                return f"vehicle {j} cannot reach its next position"
            if x_next.vehicles[j].energy > best + ENERGY_TOL:
                return f"vehicle {j} energy {x_next.vehicles[j].energy} above attainable {best}"
        return None


def continuous_transition_oracle(world: World, x: SystemState, label: Label | float, x_next: SystemState) -> bool:
    return world.is_transition(x, label, x_next)
