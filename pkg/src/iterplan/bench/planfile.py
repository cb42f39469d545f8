"""Text plan files: one block per agent, one knot per line.

Layout::

    iterplan-plan 1
    scenario <name>
    producer <solver id>
    objective <seconds>
    agent <index> <name> <ugv|uav>
    <time_s> <x_km> <y_km> <energy_kJ> <flag> <rule>
    ...
    end

Every agent block lists the same knot times in increasing order. `flag` is the
docking flag (0-2 docked count for a UGV, 3 free or 4 docked for a UAV) and
`rule` tells how energy evolves on the segment leaving that knot ("linear" or
"charge"; the last knot repeats the previous rule). Blank lines and lines
starting with '#' are ignored. Numbers are written with full float precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..plan import Plan
from ..ts import Implementation, Rule, Segment
from ..vehicles import Flag, SystemState, VehicleState

MAGIC = "iterplan-plan 1"


class PlanFileError(ValueError):
    pass


@dataclass(frozen=True)
class PlanFile:
    scenario: str
    producer: str
    objective: float
    names: tuple[str, ...]
    kinds: tuple[str, ...]
    implementation: Implementation


def format_plan(plan: Plan, scenario_name: str, names, kinds) -> str:
    impl = plan.implementation
    knots = [impl.start_state] + [s.end for s in impl.segments]
    rules = [s.rules for s in impl.segments]
    lines = [MAGIC, f"scenario {scenario_name}", f"producer {plan.producer}", f"objective {plan.objective!r}"]
    for j, (name, kind) in enumerate(zip(names, kinds)):
        lines.append(f"agent {j} {name} {kind}")
        for k, st in enumerate(knots):
            v = st.vehicles[j]
            rule = rules[min(k, len(rules) - 1)][j].value if rules else Rule.LINEAR.value
            lines.append(f"{st.time!r} {v.x!r} {v.y!r} {v.energy!r} {int(v.flag)} {rule}")
        lines.append("end")
    return "\n".join(lines) + "\n"


def write_plan(path, plan: Plan, scenario) -> None:
    names = [v.name for v in scenario.fleet]
    kinds = [v.kind.value for v in scenario.fleet]
    Path(path).write_text(format_plan(plan, scenario.name, names, kinds))


def parse_plan(text: str) -> PlanFile:
    lines = [(n + 1, ln.strip()) for n, ln in enumerate(text.splitlines())]
    lines = [(n, ln) for n, ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0][1] != MAGIC:
        raise PlanFileError(f"line 1: expected header {MAGIC!r}")
    header: dict[str, str] = {}
    blocks: list[tuple[str, str, list]] = []
    current = None
    for n, ln in lines[1:]:
        head, _, rest = ln.partition(" ")
        if current is None and head in ("scenario", "producer", "objective"):
            header[head] = rest.strip()
        elif head == "agent":
            parts = rest.split()
            if len(parts) != 3 or current is not None:
                raise PlanFileError(f"line {n}: malformed agent header")
            if int(parts[0]) != len(blocks):
                raise PlanFileError(f"line {n}: agents must be numbered in order")
            current = (parts[1], parts[2], [])
        elif head == "end":
            if current is None:
                raise PlanFileError(f"line {n}: 'end' outside an agent block")
            blocks.append(current)
            current = None
        else:
            if current is None:
                raise PlanFileError(f"line {n}: knot outside an agent block")
            parts = ln.split()
            if len(parts) != 6:
                raise PlanFileError(f"line {n}: expected 'time x y energy flag rule'")
            try:
                t, x, y, e = map(float, parts[:4])
                flag = Flag(int(parts[4]))
                rule = Rule(parts[5])
            except ValueError as exc:
                raise PlanFileError(f"line {n}: {exc}") from None
            current[2].append((t, x, y, e, flag, rule))
    if current is not None:
        raise PlanFileError("unterminated agent block")
    if not blocks:
        raise PlanFileError("no agents")
    times = [k[0] for k in blocks[0][2]]
    if not times:
        raise PlanFileError("agent 0 has no knots")
    for name, _, knots in blocks:
        if [k[0] for k in knots] != times:
            raise PlanFileError(f"agent {name}: knot times differ from agent 0")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise PlanFileError("knot times must increase")
    states = [
        SystemState(tuple(VehicleState(b[2][k][1], b[2][k][2], b[2][k][3], b[2][k][4]) for b in blocks), times[k])
        for k in range(len(times))
    ]
    segs = tuple(
        Segment(states[k], states[k + 1], times[k + 1] - times[k], tuple(b[2][k][5] for b in blocks))
        for k in range(len(times) - 1)
    )
    impl = Implementation(segs, origin=states[0])
    try:
        objective = float(header.get("objective", times[-1]))
    except ValueError:
        raise PlanFileError("objective must be a number") from None
    return PlanFile(
        header.get("scenario", ""),
        header.get("producer", ""),
        objective,
        tuple(b[0] for b in blocks),
        tuple(b[1] for b in blocks),
        impl,
    )


def read_plan(path) -> PlanFile:
    try:
        return parse_plan(Path(path).read_text())
    except FileNotFoundError:
        raise PlanFileError(f"{path}: file not found") from None
