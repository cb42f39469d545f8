import pytest

from iterplan.sampler import build_sampled_system
from iterplan.scenario import Params, Scenario, VehicleSetup, reference_scenario
from iterplan.tdo import solve_tdo
from iterplan.ts import classify_assignment
from iterplan.vehicles import VehicleKind


@pytest.fixture(scope="session")
def reference():
    return reference_scenario()


@pytest.fixture(scope="session")
def reference_system(reference):
    x0 = reference.initial_state()
    S = build_sampled_system(reference, extra_states=[x0])
    return S, classify_assignment(S, reference.assignment()), x0


@pytest.fixture(scope="session")
def reference_plan(reference, reference_system):
    S, spec, x0 = reference_system
    plan = solve_tdo(S, spec, x0, reference.params.horizon_steps, 120.0, sites=reference.sites)
    assert hasattr(plan, "objective"), plan
    return plan


def line_scenario(length=2.4, uavs=1, sites=(), depots=None, params=None, start=(1.0, 1.0), energy_uav=287.7):
    """One UGV on a straight east-west road, optionally carrying UAVs."""
    end = (start[0] + length, start[1])
    fleet = [VehicleSetup(VehicleKind.UGV, "g0", start, 25010.0)]
    fleet += [VehicleSetup(VehicleKind.UAV, f"a{i}", start, energy_uav, 0, False) for i in range(uavs)]
    return Scenario(
        (0.0, 0.0, 10.0, 10.0),
        ((start, end),),
        tuple(depots if depots is not None else (start,)),
        tuple(fleet),
        tuple(sites),
        params or Params(horizon_steps=12),
        "line",
    )


ACCEPTANCE_LINES: list[str] = []


def verdict(criterion: int, ok: bool, detail: str) -> bool:
    """Record a PASS/FAIL line for an acceptance criterion and echo it."""
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
