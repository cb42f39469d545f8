import math

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from iterplan.sampler import (
    InjectionError,
    VehicleCannotMoveError,
    build_air_grid,
    build_road_nodes,
    build_sampled_system,
    conservatism_violations,
    enumerate_states,
    quantize_energy,
)
from iterplan.scenario import Params
from iterplan.vehicles import DEFAULT_MODEL, Flag, SystemState, VehicleKind, VehicleState

from conftest import line_scenario


def test_six_km_road_gives_six_nodes_at_uniform_spacing():
    nodes = build_road_nodes((((0.0, 0.0), (6.0, 0.0)),), 1.2)
    xs = sorted(n.pos[0] for n in nodes)
    assert xs == pytest.approx([0, 1.2, 2.4, 3.6, 4.8, 6.0])  # [TRIVIAL]


def test_short_road_keeps_endpoints():
    nodes = build_road_nodes((((0.0, 0.0), (1.0, 0.0)),), 1.2)
    assert sorted(n.pos for n in nodes) == [(0.0, 0.0), (1.0, 0.0)]  # [TRIVIAL]


def test_depot_mid_edge_is_inserted():
    nodes = build_road_nodes((((0.0, 0.0), (6.0, 0.0)),), 1.2, depots=[(3.0, 0.0)])
    assert (3.0, 0.0) in [n.pos for n in nodes]


def test_nonpositive_spacing_rejected():
    with pytest.raises(ValueError):
        build_road_nodes((((0.0, 0.0), (1.0, 0.0)),), 0)


@pytest.fixture(scope="module")
def collinear_grid():
    road = build_road_nodes((((1.0, 4.0), (7.0, 4.0)),), 1.2)
    return road, build_air_grid((0, 0, 8, 8), 1.5, road, padding=2.0)


def test_air_grid_rows_are_triangular(collinear_grid):
    _, grid = collinear_grid
    ys = np.unique(np.round([n.pos[1] for n in grid if not n.on_road], 6))
    gaps = np.diff(ys)
    assert gaps == pytest.approx(np.full(len(gaps), 1.5 * math.sqrt(3) / 2), abs=1e-6)  # [TRIVIAL] 1.299 km


def test_air_grid_has_no_near_duplicates(collinear_grid):
    _, grid = collinear_grid
    pts = np.array([n.pos for n in grid])
    assert pdist(pts).min() > 0.05  # [DERIVED] all-pairs oracle


def test_air_grid_contains_every_road_node(collinear_grid):
    road, grid = collinear_grid
    assert [n.pos for n in grid[: len(road)]] == [n.pos for n in road]


def test_energy_levels_examples():
    q = quantize_energy(DEFAULT_MODEL, 5.0, 4.0, 300.0, 20, 100)
    per = 287.7 / 20
    assert q.B_move_a == math.ceil(DEFAULT_MODEL.move_energy(VehicleKind.UAV, 5.0, 300.0) / per) == 5  # [DERIVED]
    assert q.B_charge_a == math.floor(0.3108 * 300 / per) == 6  # [DERIVED]


def test_charge_table_never_overstates_physics():
    q = quantize_energy(DEFAULT_MODEL, 5.0, 4.0, 300.0, 20, 100)
    for b, to in enumerate(q.charge_to):
        assert b <= to <= q.B_max_a
        assert to * q.uav_level <= DEFAULT_MODEL.integrate_charge(b * q.uav_level, 300.0) + 1e-9


def test_zero_gamma_rejected():
    with pytest.raises(ValueError):
        quantize_energy(DEFAULT_MODEL, 5.0, 4.0, 0.0)


def test_step_longer_than_a_pack_cannot_move():
    with pytest.raises(VehicleCannotMoveError):
        quantize_energy(DEFAULT_MODEL, 5.0, 4.0, 1500.0)  # one step drains more than a full pack


def test_reference_system_counts_are_stable(reference):
    S = build_sampled_system(reference)
    # regression values recorded from this sampler on the bundled fixture
    assert (len(S.nodes), len(S.road_ids), len(S.depot_ids)) == (39, 15, 3)
    assert sum(map(len, S.adjacency_a.values())) == 204
    assert sum(map(len, S.adjacency_g.values())) == 28


def test_reference_quantization_is_conservative(reference):
    assert conservatism_violations(build_sampled_system(reference)) == []


def test_off_grid_state_is_injected():
    sc = line_scenario(length=2.4, uavs=1)
    x0 = sc.initial_state()
    g, a = x0.vehicles
    odd = SystemState((VehicleState(2.0, 1.0, 24000.0, g.flag), VehicleState(2.3, 1.7, 123.4, Flag.UAV_FREE)), 37.0)
    plain = build_sampled_system(sc)
    assert not plain.contains_state(odd)
    S = build_sampled_system(sc, extra_states=[odd])
    assert S.contains_state(odd)
    assert S.node_at((2.0, 1.0)) in S.road_ids
    assert S.time_origin == 37.0


def test_ugv_off_road_cannot_be_injected():
    sc = line_scenario(length=2.4, uavs=0)
    bad = SystemState((VehicleState(2.0, 3.0, 24000.0, Flag.UGV_NONE_DOCKED),), 0.0)
    with pytest.raises(InjectionError):
        build_sampled_system(sc, extra_states=[bad])


def test_anchor_states_become_representable(reference, reference_plan):
    impl = reference_plan.implementation
    S = build_sampled_system(reference, anchor=impl, extra_states=[reference.initial_state()])
    for g in impl.offsets:
        assert S.contains_state(impl.state_at(g))


def test_enumerated_states_all_belong_to_the_system():
    sc = line_scenario(length=2.4, uavs=1, params=Params(B_max_a=4, B_max_g=4, hull_padding=0.05))
    S = build_sampled_system(sc)
    states = enumerate_states(S, 2)
    assert states and all(S.contains_state(x) for x in states)
    assert len(set(states)) == len(states)
