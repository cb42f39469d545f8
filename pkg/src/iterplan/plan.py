"""Plans and the helpers that turn step-wise trajectories into implementations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

from .geometry import Point, dist, project_on_segment
from .ts import SITE_RADIUS, Implementation, Rule, Segment, Trajectory
from .vehicles import DEFAULT_MODEL, EnergyModel, SystemState


@dataclass(frozen=True)
class Plan:
    trajectory: Trajectory
    implementation: Implementation
    objective: float
    producer: str
    horizon_steps: int = 0
    details: Any = field(default=None, compare=False, repr=False)

    @property
    def start_time(self) -> float:
        return self.implementation.start_time


@dataclass(frozen=True)
class Infeasible:
    reason: str = ""


@dataclass(frozen=True)
class Timeout:
    reason: str = ""
    best_bound: float | None = None


CUT_GAP = 1e-6  # s, closer cuts are merged so no segment is degenerate


def split_fractions(a: SystemState, b: SystemState, sites: Sequence[Point], radius: float = SITE_RADIUS) -> list[float]:
    """Interior fractions of a straight step where some vehicle is closest to a site it passes."""
    out = set()
    for va, vb in zip(a.vehicles, b.vehicles):
        if va.position == vb.position:
            continue
        for s in sites:
            t, d = project_on_segment(s, va.position, vb.position)
            if d <= radius and 0 < t < 1:
                out.add(t)
    return sorted(out)


def step_implementation(
    traj: Trajectory,
    rules: Sequence[Sequence[Rule]],
    sites: Sequence[Point] = (),
    model: EnergyModel = DEFAULT_MODEL,
) -> Implementation:
    """Implementation of `traj` with knots added wherever a step passes a site."""
    if not traj.labels:
        return Implementation((), model, origin=traj.states[0])
    segs: list[Segment] = []
    for k, (a, lab, b) in enumerate(traj.transitions()):
        whole = Segment(a, b, lab.duration, tuple(rules[k]))
        cuts = [0.0]
        for t in (f * lab.duration for f in split_fractions(a, b, sites)):
            if t - cuts[-1] > CUT_GAP and lab.duration - t > CUT_GAP:
                cuts.append(t)
        cuts.append(lab.duration)
        prev = a
        for t0, t1 in zip(cuts, cuts[1:]):
            nxt = b if t1 == lab.duration else whole.at(t1, model)
            segs.append(Segment(prev, nxt, t1 - t0, tuple(rules[k])))
            prev = nxt
    return Implementation(tuple(segs), model)


def sites_hit(impl: Implementation, sites: Sequence[Point], until: float | None = None, resolution: float = 1.0, radius: float = SITE_RADIUS) -> set[int]:
    """Indices of sites some vehicle enters within the first `until` seconds."""
    end = impl.total_duration if until is None else min(until, impl.total_duration)
    hit: set[int] = set()
    offsets = [g for g in impl.sample_offsets(resolution) if g <= end + 1e-9]
    for g in offsets:
        out = impl.state_at(g).output()
        for i, s in enumerate(sites):
            if i not in hit and any(dist(p, s) <= radius + 1e-12 for p in out):
                hit.add(i)
        if len(hit) == len(sites):
            break
    return hit
