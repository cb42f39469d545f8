"""Vehicle power, charging and battery models for the UAV/UGV team.

Positions are in kilometres, energies in kilojoules, powers in watts and
durations in seconds throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np


class DomainError(ValueError):
    """A model was evaluated outside its physical domain."""


class VehicleKind(str, Enum):
    UGV = "ugv"
    UAV = "uav"


class Flag(IntEnum):
    """Docking status carried in each vehicle state."""

    UGV_NONE_DOCKED = 0
    UGV_ONE_DOCKED = 1
    UGV_TWO_DOCKED = 2
    UAV_FREE = 3
    UAV_DOCKED = 4


UGV_FLAGS = (Flag.UGV_NONE_DOCKED, Flag.UGV_ONE_DOCKED, Flag.UGV_TWO_DOCKED)
UAV_FLAGS = (Flag.UAV_FREE, Flag.UAV_DOCKED)


@dataclass(frozen=True)
class EnergyModel:
    ugv_capacity: float = 25010.0
    uav_capacity: float = 287.7
    ugv_max_speed: float = 4.5
    uav_max_speed: float = 16.0
    ugv_idle_power: float = 200.0
    charge_knee: float = 270.4
    charge_flat_power: float = 310.8
    charge_taper_gain: float = 17.965
    overhead: float = 1.05

    def capacity(self, kind: VehicleKind) -> float:
        return self.ugv_capacity if kind == VehicleKind.UGV else self.uav_capacity

    def max_speed(self, kind: VehicleKind) -> float:
        return self.ugv_max_speed if kind == VehicleKind.UGV else self.uav_max_speed

    # -- power curves -------------------------------------------------------

    def ugv_power(self, v: float) -> float:
        if v < 0 or v > self.ugv_max_speed + 1e-12:
            raise DomainError(f"UGV speed {v} outside [0, {self.ugv_max_speed}]")
        if v == 0:
            return self.ugv_idle_power
        return self.overhead * (464.8 * v + 356.3)

    def uav_power(self, v: float) -> float:
        if v < 0 or v > self.uav_max_speed + 1e-12:
            raise DomainError(f"UAV speed {v} outside [0, {self.uav_max_speed}]")
        return self.overhead * (0.0461 * v**3 - 0.5834 * v**2 - 1.8761 * v + 229.6)

    def charge_power(self, energy: float) -> float:
        if energy < 0 or energy > self.uav_capacity + 1e-9:
            raise DomainError(f"battery energy {energy} outside [0, {self.uav_capacity}]")
        if energy <= self.charge_knee:
            return self.charge_flat_power
        return self.charge_taper_gain * (self.uav_capacity - energy)

    def integrate_charge(self, energy: float, duration: float) -> float:
        """Battery energy after charging for `duration` seconds from `energy`.

        Closed form of the constant-power / exponential-taper ODE.
        """
        if duration < 0:
            raise DomainError("negative charging duration")
        if energy < -1e-9 or energy > self.uav_capacity + 1e-9:
            raise DomainError(f"battery energy {energy} outside [0, {self.uav_capacity}]")
        e = min(max(energy, 0.0), self.uav_capacity)
        t = float(duration)
        rate = self.charge_flat_power / 1000.0
        if e < self.charge_knee:
            to_knee = (self.charge_knee - e) / rate
            if t <= to_knee:
                return e + rate * t
            t -= to_knee
            e = self.charge_knee
        decay = self.charge_taper_gain / 1000.0
        return self.uav_capacity - (self.uav_capacity - e) * math.exp(-decay * t)

    def charge_curve(self, energy: float, times: np.ndarray) -> np.ndarray:
        return np.array([self.integrate_charge(energy, float(t)) for t in times])

    # -- energy for motion --------------------------------------------------

    def move_energy(self, kind: VehicleKind, speed: float, duration: float) -> float:
        """Energy (kJ) drawn moving at constant `speed` m/s for `duration` s."""
        if duration < 0:
            raise DomainError("negative duration")
        power = self.ugv_power(speed) if kind == VehicleKind.UGV else self.uav_power(speed)
        return power * duration / 1000.0

    def travel_energy(self, kind: VehicleKind, distance: float, speed: float) -> float:
        """Energy (kJ) to cover `distance` km at constant `speed` m/s."""
        if distance < 0:
            raise DomainError("negative distance")
        if distance == 0:
            return 0.0
        if speed <= 0:
            raise DomainError("positive distance needs a positive speed")
        return self.move_energy(kind, speed, distance * 1000.0 / speed)

    def uav_min_flight_energy(self, distance: float, duration: float) -> float:
        """Least energy to fly `distance` km within `duration` s, landing for the rest."""
        if distance <= 0:
            return 0.0
        lo = distance * 1000.0 / duration
        if lo > self.uav_max_speed * (1 + 1e-9):
            raise DomainError("distance not coverable in the given duration")
        lo = min(lo, self.uav_max_speed)
        candidates = [lo, self.uav_max_speed]
        # stationary points of P(v)/v, i.e. roots of 0.0922 v^3 - 0.5834 v^2 - 229.6
        for r in np.roots([0.0922, -0.5834, 0.0, -229.6]):
            if abs(r.imag) < 1e-9 and lo <= r.real <= self.uav_max_speed:
                candidates.append(float(r.real))
        return min(self.travel_energy(VehicleKind.UAV, distance, v) for v in candidates)

    def ugv_min_energy(self, distance: float, duration: float) -> float:
        """Least energy for a UGV covering `distance` km of road within `duration` s.

        Driving costs more per metre at lower speed, so the minimum drives at
        top speed and idles the remainder.
        """
        if distance <= 0:
            return self.ugv_idle_power * duration / 1000.0
        v = self.ugv_max_speed
        drive = distance * 1000.0 / v
        if drive > duration * (1 + 1e-9):
            raise DomainError("distance not coverable in the given duration")
        return (self.ugv_power(v) * drive + self.ugv_idle_power * max(duration - drive, 0.0)) / 1000.0


DEFAULT_MODEL = EnergyModel()


def ugv_power(v: float) -> float:
    return DEFAULT_MODEL.ugv_power(v)


def uav_power(v: float) -> float:
    return DEFAULT_MODEL.uav_power(v)


def charge_power(energy: float) -> float:
    return DEFAULT_MODEL.charge_power(energy)


def integrate_charge(energy: float, duration: float) -> float:
    return DEFAULT_MODEL.integrate_charge(energy, duration)


def move_energy(kind: VehicleKind, speed: float, duration: float) -> float:
    return DEFAULT_MODEL.move_energy(kind, speed, duration)


@dataclass(frozen=True)
class VehicleSpec:
    """One vehicle of the fleet. UAVs name the UGV (fleet index) that hosts them."""

    kind: VehicleKind
    name: str = ""
    host: int | None = None


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    energy: float
    flag: Flag

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class SystemState:
    vehicles: tuple[VehicleState, ...]
    time: float = 0.0

    def output(self) -> tuple[tuple[float, float], ...]:
        return tuple(v.position for v in self.vehicles)


@dataclass(frozen=True)
class Fleet:
    vehicles: tuple[VehicleSpec, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.vehicles)

    def __getitem__(self, i: int) -> VehicleSpec:
        return self.vehicles[i]

    def indices(self, kind: VehicleKind) -> list[int]:
        return [i for i, v in enumerate(self.vehicles) if v.kind == kind]

    def hosted_by(self, ugv: int) -> list[int]:
        return [i for i, v in enumerate(self.vehicles) if v.kind == VehicleKind.UAV and v.host == ugv]

    @staticmethod
    def groups(n_groups: int) -> "Fleet":
        """`n_groups` copies of one UGV carrying two UAVs."""
        specs: list[VehicleSpec] = []
        for g in range(n_groups):
            host = len(specs)
            specs.append(VehicleSpec(VehicleKind.UGV, f"ugv{g}"))
            specs.append(VehicleSpec(VehicleKind.UAV, f"uav{2 * g}", host))
            specs.append(VehicleSpec(VehicleKind.UAV, f"uav{2 * g + 1}", host))
        return Fleet(tuple(specs))
