import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from iterplan.geometry import RoadNetwork
from iterplan.ts import Label
from iterplan.vehicles import (
    DEFAULT_MODEL,
    DomainError,
    Fleet,
    Flag,
    SystemState,
    VehicleKind,
    VehicleSpec,
    VehicleState,
    charge_power,
    integrate_charge,
    move_energy,
    uav_power,
    ugv_power,
)
from iterplan.world import World, continuous_transition_oracle

# independent re-statements of the power curves, evaluated with numpy
UGV_POLY = np.array([464.8, 356.3]) * 1.05
UAV_POLY = np.array([0.0461, -0.5834, -1.8761, 229.6]) * 1.05


def rk4_charge(e0, dt, steps=20000):
    """Fixed-step RK4 on dE/dt = charge_power(E)/1000, written without the model's closed form."""

    def rate(e):
        return (310.8 if e <= 270.4 else 17.965 * (287.7 - e)) / 1000.0

    h = dt / steps
    e = e0
    for _ in range(steps):
        k1 = rate(e)
        k2 = rate(e + h * k1 / 2)
        k3 = rate(e + h * k2 / 2)
        k4 = rate(e + h * k3)
        e += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    return min(e, 287.7)


# -- power curves ---------------------------------------------------------------


def test_ugv_idle_is_exactly_200_watts():
    assert ugv_power(0) == 200.0  # [PAPER]


@pytest.mark.parametrize("v", [4.5, 4.0, 1.0, 0.1])
def test_ugv_power_matches_polynomial(v):
    assert ugv_power(v) == pytest.approx(np.polyval(UGV_POLY, v), abs=1e-9)  # [DERIVED]


def test_ugv_power_spot_values():
    assert ugv_power(4.5) == pytest.approx(2570.295, abs=1e-3)  # [DERIVED]
    # 1.05 * (464.8 * 4 + 356.3); the value 2326.455 sometimes quoted for this point is an arithmetic slip
    assert ugv_power(4.0) == pytest.approx(2326.275, abs=1e-3)  # [DERIVED]


@pytest.mark.parametrize("v,expected", [(0, 241.08), (16, 251.01), (5, 221.97)])
def test_uav_power_spot_values(v, expected):
    assert uav_power(v) == pytest.approx(np.polyval(UAV_POLY, v), abs=1e-9)  # [DERIVED]
    assert uav_power(v) == pytest.approx(expected, abs=0.01)  # [DERIVED]


@pytest.mark.parametrize("fn,v", [(ugv_power, -0.1), (ugv_power, 4.6), (uav_power, -1), (uav_power, 16.5)])
def test_power_outside_speed_range_raises(fn, v):
    with pytest.raises(DomainError):
        fn(v)


def test_uav_power_minimum_sits_near_9_8_and_rises_to_16():
    # d/dv of the cubic: 0.1383 v^2 - 1.1668 v - 1.8761, positive root
    v_min = (1.1668 + math.sqrt(1.1668**2 + 4 * 0.1383 * 1.8761)) / (2 * 0.1383)
    assert v_min == pytest.approx(9.82, abs=0.01)  # [DERIVED]
    falling = [uav_power(v) for v in np.arange(6.0, 9.8, 0.1)]
    rising = [uav_power(min(v, 16.0)) for v in np.arange(9.9, 16.0 + 1e-9, 0.1)]
    assert all(b < a for a, b in zip(falling, falling[1:]))
    assert all(b > a for a, b in zip(rising, rising[1:]))


def test_powers_strictly_positive():
    assert all(ugv_power(v) > 0 for v in np.linspace(0, 4.5, 50))
    assert all(uav_power(v) > 0 for v in np.linspace(0, 16, 50))


# -- charging -------------------------------------------------------------------


def test_charge_power_regimes():
    assert charge_power(0) == 310.8  # [PAPER]
    assert charge_power(287.7) == 0.0  # [TRIVIAL]
    assert charge_power(270.4) == 310.8
    assert abs(17.965 * (287.7 - 270.4) - 310.8) < 0.05  # continuity at the knee


def test_charge_power_continuity_at_knee():
    just_above = charge_power(270.4 + 1e-9)
    assert abs(just_above - charge_power(270.4)) < 0.05


def test_charge_power_domain():
    with pytest.raises(DomainError):
        charge_power(-1)
    with pytest.raises(DomainError):
        charge_power(300)


def test_integrate_charge_linear_regime():
    assert integrate_charge(0, 300) == pytest.approx(0.3108 * 300, abs=1e-9)  # [DERIVED] 93.24


def test_integrate_charge_fixed_point():
    assert integrate_charge(287.7, 1234) == pytest.approx(287.7)


def test_integrate_charge_taper_closed_form():
    expected = 287.7 - 17.3 * math.exp(-0.017965 * 300)  # [DERIVED]
    assert integrate_charge(270.4, 300) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(287.62, abs=0.01)


@pytest.mark.parametrize("e0", [0.0, 100.0, 270.4, 280.0])
@pytest.mark.parametrize("dt", [60.0, 300.0, 3600.0])
def test_integrate_charge_matches_rk4(e0, dt):
    ref = rk4_charge(e0, dt)
    assert abs(integrate_charge(e0, dt) - ref) <= 1e-3 * ref


@pytest.mark.parametrize("e0", [0.0, 150.0, 275.0])
def test_integrate_charge_matches_adaptive_ode(e0):
    sol = solve_ivp(lambda t, e: [DEFAULT_MODEL.charge_power(min(max(e[0], 0), 287.7)) / 1000.0], (0, 900), [e0], rtol=1e-10, atol=1e-10)
    assert integrate_charge(e0, 900) == pytest.approx(sol.y[0, -1], rel=1e-6)


def test_integrate_charge_monotone_and_capped():
    ts = np.linspace(0, 5000, 200)
    es = DEFAULT_MODEL.charge_curve(10.0, ts)
    assert np.all(np.diff(es) >= -1e-12)
    assert es.max() <= 287.7


# -- motion energy --------------------------------------------------------------


def test_move_energy_examples():
    assert move_energy(VehicleKind.UAV, 5, 300) == pytest.approx(np.polyval(UAV_POLY, 5) * 0.3, abs=1e-9)  # [DERIVED]
    assert move_energy(VehicleKind.UAV, 5, 300) == pytest.approx(66.59, abs=0.01)
    assert move_energy(VehicleKind.UGV, 0, 300) == pytest.approx(60.0)  # [DERIVED]
    assert move_energy(VehicleKind.UAV, 10, 0) == 0  # [TRIVIAL]


def test_uav_min_flight_energy_beats_every_constant_speed():
    d, dur = 3.0, 300.0
    best = DEFAULT_MODEL.uav_min_flight_energy(d, dur)
    grid = np.linspace(d * 1000 / dur, 16.0, 400)
    assert best <= min(DEFAULT_MODEL.travel_energy(VehicleKind.UAV, d, v) for v in grid) + 1e-9


def test_ugv_min_energy_is_top_speed_plus_idle():
    d, dur = 1.2, 300.0
    drive = d * 1000 / 4.5
    expected = (np.polyval(UGV_POLY, 4.5) * drive + 200 * (dur - drive)) / 1000
    assert DEFAULT_MODEL.ugv_min_energy(d, dur) == pytest.approx(expected)


# -- transition oracle ------------------------------------------------------------


@pytest.fixture
def world():
    road = RoadNetwork((((0.0, 0.0), (6.0, 0.0)),))
    fleet = Fleet((VehicleSpec(VehicleKind.UGV, "g"), VehicleSpec(VehicleKind.UAV, "a", 0)))
    return World(road, ((6.0, 0.0),), fleet)


def state(t, ugv, uav, ugv_flag=Flag.UGV_NONE_DOCKED, uav_flag=Flag.UAV_FREE):
    return SystemState((VehicleState(*ugv, ugv_flag), VehicleState(*uav, uav_flag)), t)


def test_idle_step_with_idle_draw_is_valid(world):
    x = state(0, (1.0, 0.0, 1000.0), (1.0, 2.0, 100.0))
    y = state(300, (1.0, 0.0, 1000.0 - 60.0), (1.0, 2.0, 100.0))
    assert continuous_transition_oracle(world, x, Label(300), y)


def test_idle_step_without_draw_is_rejected(world):
    x = state(0, (1.0, 0.0, 1000.0), (1.0, 2.0, 100.0))
    y = state(300, (1.0, 0.0, 1000.0), (1.0, 2.0, 100.0))
    assert not continuous_transition_oracle(world, x, Label(300), y)


def test_state_to_itself_is_never_a_transition(world):
    x = state(0, (1.0, 0.0, 1000.0), (1.0, 2.0, 100.0))
    assert not continuous_transition_oracle(world, x, Label(300), x)


def test_uav_too_fast_is_rejected(world):
    x = state(0, (1.0, 0.0, 1000.0), (0.0, 1.0, 280.0))
    y = state(300, (1.0, 0.0, 900.0), (5.0, 1.0, 100.0))  # needs 16.7 m/s
    assert not continuous_transition_oracle(world, x, Label(300), y)
    y_ok = state(300, (1.0, 0.0, 900.0), (4.8, 1.0, 100.0))  # exactly 16 m/s
    assert continuous_transition_oracle(world, x, Label(300), y_ok)


def test_docked_uav_away_from_host_is_rejected(world):
    x = state(0, (1.0, 0.0, 1000.0), (1.0, 0.0, 100.0), Flag.UGV_ONE_DOCKED, Flag.UAV_DOCKED)
    y = state(300, (1.0, 0.0, 900.0), (1.5, 0.0, 100.0), Flag.UGV_ONE_DOCKED, Flag.UAV_DOCKED)
    assert not continuous_transition_oracle(world, x, Label(300), y)


def test_docked_uav_charges_from_host(world):
    x = state(0, (1.0, 0.0, 1000.0), (1.0, 0.0, 100.0), Flag.UGV_ONE_DOCKED, Flag.UAV_DOCKED)
    gain = integrate_charge(100.0, 300) - 100.0
    y = state(300, (1.0, 0.0, 1000.0 - 60.0 - gain), (1.0, 0.0, 100.0 + gain), Flag.UGV_ONE_DOCKED, Flag.UAV_DOCKED)
    assert continuous_transition_oracle(world, x, Label(300), y)
    greedy = state(300, (1.0, 0.0, 1000.0 - 60.0), (1.0, 0.0, 100.0 + gain), Flag.UGV_ONE_DOCKED, Flag.UAV_DOCKED)
    assert not continuous_transition_oracle(world, x, Label(300), greedy)


def test_energy_above_capacity_is_rejected(world):
    x = state(0, (1.0, 0.0, 1000.0), (1.0, 2.0, 100.0))
    y = state(300, (1.0, 0.0, 900.0), (1.0, 2.0, 400.0))
    assert not continuous_transition_oracle(world, x, Label(300), y)
