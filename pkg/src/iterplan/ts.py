"""Transition-system semantics shared by the solvers and the executor.

Trajectories are finite state/label sequences; implementations are their
piecewise continuous-time realizations. The output of a team state is the
tuple of vehicle positions.
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Protocol, Sequence

from .geometry import Point, dist, lerp, point_key, segment_hits_disc
from .vehicles import DEFAULT_MODEL, DomainError, EnergyModel, SystemState, VehicleState

SITE_RADIUS = 0.001  # km


class StructuralError(ValueError):
    """Malformed trajectory, implementation or state tuple."""


class UnsatisfiableClassError(ValueError):
    """A task site no sampled state or transition can reach."""


class PartialResultError(RuntimeError):
    def __init__(self, checked_fraction: float, violations: list):
        super().__init__(f"enumeration budget exceeded after {checked_fraction:.1%} of checks")
        self.checked_fraction = checked_fraction
        self.violations = violations


@dataclass(frozen=True)
class Label:
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise StructuralError(f"transition label must be positive, got {self.duration}")


@dataclass(frozen=True)
class Trajectory:
    states: tuple[SystemState, ...]
    labels: tuple[Label, ...] = ()

    def __post_init__(self):
        if len(self.states) == 0 or len(self.labels) != len(self.states) - 1:
            raise StructuralError(
                f"trajectory with {len(self.states)} states needs {len(self.states) - 1} labels, got {len(self.labels)}"
            )

    def __len__(self) -> int:
        return len(self.labels)

    def transitions(self) -> Iterable[tuple[SystemState, Label, SystemState]]:
        for k, lab in enumerate(self.labels):
            yield self.states[k], lab, self.states[k + 1]


class TransitionOracle(Protocol):
    def is_transition(self, x: SystemState, label: Label, x_next: SystemState) -> bool: ...


def _as_predicate(system) -> Callable[[SystemState, Label, SystemState], bool]:
    return system.is_transition if hasattr(system, "is_transition") else system


def validate_trajectory(system, traj: Trajectory) -> bool:
    """True iff every step of `traj` is a transition of `system`."""
    if not isinstance(traj, Trajectory):
        raise StructuralError("expected a Trajectory")
    ok = _as_predicate(system)
    return all(ok(x, lab, y) for x, lab, y in traj.transitions())


def first_invalid_step(system, traj: Trajectory) -> int | None:
    ok = _as_predicate(system)
    for k, (x, lab, y) in enumerate(traj.transitions()):
        if not ok(x, lab, y):
            return k
    return None


# -- implementations ----------------------------------------------------------


class Rule(str, Enum):
    LINEAR = "linear"  # position and energy interpolate linearly
    CHARGE = "charge"  # position linear, energy follows the charging curve capped at the end value


@dataclass(frozen=True)
class Segment:
    start: SystemState
    end: SystemState
    duration: float
    rules: tuple[Rule, ...]

    def at(self, t: float, model: EnergyModel) -> SystemState:
        if t <= 0:
            return self.start
        if t >= self.duration:
            return self.end
        f = t / self.duration
        out = []
        for a, b, rule in zip(self.start.vehicles, self.end.vehicles, self.rules):
            x, y = lerp(a.position, b.position, f)
            if rule == Rule.CHARGE:
                e = min(model.integrate_charge(min(a.energy, model.uav_capacity), t), b.energy)
                e = max(e, min(a.energy, b.energy))
            else:
                e = a.energy + (b.energy - a.energy) * f
            out.append(VehicleState(x, y, e, a.flag))
        return SystemState(tuple(out), self.start.time + t)


@dataclass(frozen=True)
class Implementation:
    segments: tuple[Segment, ...]
    model: EnergyModel = field(default=DEFAULT_MODEL, compare=False, repr=False)
    origin: SystemState | None = None  # used only when there are no segments

    def __post_init__(self):
        for s, t in zip(self.segments, self.segments[1:]):
            if s.end != t.start:
                raise StructuralError("segment end state differs from next segment start")
        if not self.segments and self.origin is None:
            raise StructuralError("empty implementation needs an origin state")

    @property
    def offsets(self) -> list[float]:
        """Cumulative knot times relative to the start, length len(segments)+1."""
        return list(itertools.accumulate((s.duration for s in self.segments), initial=0.0))

    @property
    def total_duration(self) -> float:
        return self.offsets[-1]

    @property
    def start_state(self) -> SystemState:
        return self.segments[0].start if self.segments else self.origin

    @property
    def end_state(self) -> SystemState:
        return self.segments[-1].end if self.segments else self.origin

    @property
    def start_time(self) -> float:
        return self.start_state.time

    @property
    def end_time(self) -> float:
        return self.end_state.time

    def state_at(self, gamma: float) -> SystemState:
        """State at `gamma` seconds after the start."""
        total = self.total_duration
        if gamma < -1e-9 or gamma > total + 1e-9:
            raise DomainError(f"time {gamma} outside [0, {total}]")
        if not self.segments:
            return self.origin
        offs = self.offsets
        i = bisect.bisect_right(offs, gamma) - 1
        if i >= len(self.segments):
            return self.segments[-1].end
        i = max(i, 0)
        if gamma == offs[i]:
            return self.segments[i].start
        return self.segments[i].at(gamma - offs[i], self.model)

    def trajectory(self) -> Trajectory:
        if not self.segments:
            return Trajectory((self.origin,), ())
        states = (self.segments[0].start,) + tuple(s.end for s in self.segments)
        return Trajectory(states, tuple(Label(s.duration) for s in self.segments))

    def sample_offsets(self, resolution: float = 1.0) -> list[float]:
        """Knot offsets merged with a uniform grid of the given resolution."""
        total = self.total_duration
        grid = [i * resolution for i in range(int(math.floor(total / resolution)) + 1)]
        return sorted(set(grid) | set(self.offsets))

    def restrict(self, t0: float, t1: float) -> "Implementation":
        """Sub-implementation between offsets t0 and t1 (relative to start)."""
        t1 = min(t1, self.total_duration)
        if t1 <= t0:
            return Implementation((), self.model, origin=self.state_at(t0))
        segs = []
        for off, seg in zip(self.offsets, self.segments):
            a, b = max(t0, off), min(t1, off + seg.duration)
            if b - a <= 1e-12:
                continue
            sa = seg.at(a - off, self.model)
            sb = seg.at(b - off, self.model)
            if segs:
                sa = segs[-1].end
            segs.append(Segment(sa, sb, b - a, seg.rules))
        return Implementation(tuple(segs), self.model) if segs else Implementation((), self.model, origin=self.state_at(t0))

    def then(self, other: "Implementation") -> "Implementation":
        if not self.segments:
            return other
        if not other.segments:
            return self
        first = other.segments[0]
        glued = replace(first, start=self.segments[-1].end)
        return Implementation(self.segments + (glued,) + other.segments[1:], self.model)


def output_behavior(impl: Implementation, gamma: float) -> tuple[Point, ...]:
    return impl.state_at(gamma).output()


def site_hit_times(impl: Implementation, site: Point, radius: float = SITE_RADIUS, resolution: float = 1.0) -> list[float]:
    """Offsets (sampled at `resolution` plus knots) where some vehicle is inside the site disc."""
    hits = []
    for g in impl.sample_offsets(resolution):
        if any(dist(p, site) <= radius + 1e-12 for p in output_behavior(impl, g)):
            hits.append(g)
    return hits


# -- task sites and specifications -------------------------------------------


@dataclass(frozen=True)
class OutputClass:
    center: Point
    radius: float = SITE_RADIUS

    def contains_point(self, p: Point) -> bool:
        return dist(p, self.center) <= self.radius + 1e-12

    def contains(self, output: Sequence[Point]) -> bool:
        return any(self.contains_point(p) for p in output)


@dataclass(frozen=True)
class TaskSiteAssignment:
    classes: tuple[OutputClass, ...]

    @staticmethod
    def from_points(points: Iterable[Point], radius: float = SITE_RADIUS) -> "TaskSiteAssignment":
        return TaskSiteAssignment(tuple(OutputClass((float(x), float(y)), radius) for x, y in points))

    def __len__(self) -> int:
        return len(self.classes)

    def without(self, indices: Iterable[int]) -> "TaskSiteAssignment":
        drop = set(indices)
        return TaskSiteAssignment(tuple(c for i, c in enumerate(self.classes) if i not in drop))


PosKey = tuple[float, float]


@dataclass(frozen=True)
class SpecClasses:
    """Key classes keyed by node positions (rounded to micro-km).

    A state belongs to a key state class when some vehicle occupies one of the
    listed positions; a step belongs to a key transition class when some
    vehicle moves along one of the listed directed edges.
    """

    key_state_classes: tuple[tuple[int, frozenset[PosKey]], ...] = ()
    key_transition_classes: tuple[tuple[int, frozenset[tuple[PosKey, PosKey]]], ...] = ()

    @property
    def n_classes(self) -> int:
        return len(self.key_state_classes) + len(self.key_transition_classes)

    def class_indices(self) -> list[int]:
        return sorted([i for i, _ in self.key_state_classes] + [i for i, _ in self.key_transition_classes])


def classify_assignment(sampled, assignment: TaskSiteAssignment) -> SpecClasses:
    """Split task sites into key state classes and key transition classes of `sampled`.

    `sampled` must expose `node_positions()` and `directed_edges()`.
    """
    nodes = [point_key(p) for p in sampled.node_positions()]
    edges = [(point_key(a), point_key(b)) for a, b in sampled.directed_edges()]
    state_classes, trans_classes = [], []
    for i, cls in enumerate(assignment.classes):
        hit_nodes = frozenset(n for n in nodes if cls.contains_point(n))
        if hit_nodes:
            state_classes.append((i, hit_nodes))
            continue
        hit_edges = frozenset(
            (a, b) for a, b in edges if (t := segment_hits_disc(a, b, cls.center, cls.radius)) is not None and 0 < t < 1
        )
        if not hit_edges:
            raise UnsatisfiableClassError(f"task site {i} at {cls.center} is reachable by no node or edge")
        trans_classes.append((i, hit_edges))
    return SpecClasses(tuple(state_classes), tuple(trans_classes))


def satisfies_specification(traj: Trajectory, spec: SpecClasses) -> bool:
    return not unsatisfied_classes(traj, spec)


def unsatisfied_classes(traj: Trajectory, spec: SpecClasses) -> list[int]:
    occupied = {point_key(p) for x in traj.states for p in x.output()}
    moves = set()
    for a, b in zip(traj.states, traj.states[1:]):
        for va, vb in zip(a.vehicles, b.vehicles):
            moves.add((point_key(va.position), point_key(vb.position)))
    missing = [i for i, nodes in spec.key_state_classes if not (nodes & occupied)]
    missing += [i for i, es in spec.key_transition_classes if not (es & moves)]
    return sorted(missing)


# -- partial order ------------------------------------------------------------


class PartialOrderResult(str, Enum):
    GREATER_OR_EQUAL = "GreaterOrEqual"
    LESS_OR_EQUAL = "LessOrEqual"
    EQUAL = "Equal"
    INCOMPARABLE = "Incomparable"


def compare_states(x: SystemState, other: SystemState) -> PartialOrderResult:
    """How `other` ranks against `x`.

    GREATER_OR_EQUAL means `other` dominates `x`: same positions and flags,
    no less energy for every vehicle, and no later timestamp.
    """
    if len(x.vehicles) != len(other.vehicles):
        raise StructuralError("states from different fleets")
    for a, b in zip(x.vehicles, other.vehicles):
        if a.position != b.position or a.flag != b.flag:
            return PartialOrderResult.INCOMPARABLE
    ge = all(b.energy >= a.energy for a, b in zip(x.vehicles, other.vehicles)) and other.time <= x.time
    le = all(b.energy <= a.energy for a, b in zip(x.vehicles, other.vehicles)) and other.time >= x.time
    if ge and le:
        return PartialOrderResult.EQUAL
    if ge:
        return PartialOrderResult.GREATER_OR_EQUAL
    if le:
        return PartialOrderResult.LESS_OR_EQUAL
    return PartialOrderResult.INCOMPARABLE


def dominates(big: SystemState, small: SystemState) -> bool:
    return compare_states(small, big) in (PartialOrderResult.GREATER_OR_EQUAL, PartialOrderResult.EQUAL)


@dataclass(frozen=True)
class MonotonicityViolation:
    x1: SystemState
    label: Label
    x1_next: SystemState
    x2: SystemState


def check_monotonicity(
    states: Sequence[SystemState],
    labels: Sequence[Label],
    system,
    order: Callable[[SystemState, SystemState], PartialOrderResult] = compare_states,
    max_checks: int | None = None,
) -> list[MonotonicityViolation]:
    """Exhaustively look for dominated-state transitions that the dominating state lacks."""
    ok = _as_predicate(system)
    up = {
        i: [j for j, x2 in enumerate(states) if j != i and order(x1, x2) in (PartialOrderResult.GREATER_OR_EQUAL, PartialOrderResult.EQUAL)]
        for i, x1 in enumerate(states)
    }
    total = sum(len(labels) * len(states) * (1 + len(up[i])) for i in range(len(states)))
    done = 0
    violations = []
    for i, x1 in enumerate(states):
        for lab in labels:
            for y in states:
                done += 1
                if max_checks is not None and done > max_checks:
                    raise PartialResultError(done / total, violations)
                if not ok(x1, lab, y):
                    continue
                for j in up[i]:
                    done += 1
                    if not ok(states[j], lab, y):
                        violations.append(MonotonicityViolation(x1, lab, y, states[j]))
    return violations
