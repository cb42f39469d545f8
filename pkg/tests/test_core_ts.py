import pytest

from iterplan.geometry import project_on_segment
from iterplan.sampler import build_sampled_system
from iterplan.ts import (
    Implementation,
    Label,
    PartialOrderResult,
    PartialResultError,
    Rule,
    Segment,
    SpecClasses,
    StructuralError,
    TaskSiteAssignment,
    Trajectory,
    UnsatisfiableClassError,
    check_monotonicity,
    classify_assignment,
    compare_states,
    output_behavior,
    satisfies_specification,
    site_hit_times,
    unsatisfied_classes,
    validate_trajectory,
)
from iterplan.vehicles import DEFAULT_MODEL, DomainError, Flag, SystemState, VehicleState

from conftest import line_scenario

GE, LE, EQ, INC = (
    PartialOrderResult.GREATER_OR_EQUAL,
    PartialOrderResult.LESS_OR_EQUAL,
    PartialOrderResult.EQUAL,
    PartialOrderResult.INCOMPARABLE,
)


def uav(x, y, e, flag=Flag.UAV_FREE):
    return VehicleState(x, y, e, flag)


def one(x, y, e, t=0.0):
    return SystemState((uav(x, y, e),), t)


# -- trajectories -------------------------------------------------------------------


def test_single_state_trajectory_is_valid():
    traj = Trajectory((one(0, 0, 100),))
    assert validate_trajectory(lambda *a: False, traj)  # [TRIVIAL] vacuous


def test_label_count_mismatch_is_structural():
    with pytest.raises(StructuralError):
        Trajectory((one(0, 0, 1), one(1, 0, 1)), ())


def test_nonpositive_label_rejected():
    with pytest.raises(StructuralError):
        Label(0)


def test_trajectory_over_capacity_fails_validation(reference):
    world = reference.world()
    x0 = reference.initial_state()
    vs = list(x0.vehicles)
    vs[1] = VehicleState(vs[1].x, vs[1].y, 400.0, vs[1].flag)  # above 287.7
    bad = Trajectory((x0, SystemState(tuple(vs), 300.0)), (Label(300),))
    assert not validate_trajectory(world, bad)  # [DERIVED] world oracle rejects


# -- implementations ------------------------------------------------------------------


def straight(t=300.0):
    a, b = one(0.0, 0.0, 200.0), one(1.5, 0.0, 150.0, t)
    return Implementation((Segment(a, b, t, (Rule.LINEAR,)),))


def test_midpoint_of_straight_segment():
    assert output_behavior(straight(), 150.0) == ((0.75, 0.0),)  # [TRIVIAL]


def test_knots_are_hit_exactly():
    impl = straight()
    assert impl.state_at(0.0) == impl.segments[0].start
    assert impl.state_at(300.0) == impl.segments[0].end


def test_output_outside_range_raises():
    with pytest.raises(DomainError):
        output_behavior(straight(), 301.0)
    with pytest.raises(DomainError):
        output_behavior(straight(), -1.0)


def test_charging_segment_follows_charge_curve():
    a = one(2.0, 2.0, 50.0)
    b = one(2.0, 2.0, DEFAULT_MODEL.integrate_charge(50.0, 300.0), 300.0)
    impl = Implementation((Segment(a, b, 300.0, (Rule.CHARGE,)),))
    mid = impl.state_at(100.0)
    assert mid.output() == ((2.0, 2.0),)
    assert mid.vehicles[0].energy == pytest.approx(DEFAULT_MODEL.integrate_charge(50.0, 100.0))  # [DERIVED]


def test_segments_must_chain():
    a, b, c = one(0, 0, 10), one(1, 0, 9, 10), one(2, 0, 8, 20)
    with pytest.raises(StructuralError):
        Implementation((Segment(a, b, 10, (Rule.LINEAR,)), Segment(c, c, 10, (Rule.LINEAR,))))


def test_restrict_and_then_roundtrip():
    a, b, c = one(0, 0, 10), one(1, 0, 9, 10), one(2, 0, 8, 20)
    impl = Implementation((Segment(a, b, 10, (Rule.LINEAR,)), Segment(b, c, 10, (Rule.LINEAR,))))
    left, right = impl.restrict(0, 15), impl.restrict(15, 20)
    glued = left.then(right)
    assert glued.total_duration == pytest.approx(20)
    for g in (0, 5, 12, 15, 18, 20):
        (gx, gy), = glued.state_at(g).output()
        (ix, iy), = impl.state_at(g).output()
        assert (gx, gy) == pytest.approx((ix, iy))


def test_site_hit_times_on_straight_segment():
    hits = site_hit_times(straight(), (0.75, 0.0))
    assert hits and min(hits) == pytest.approx(150.0, abs=1.0)


# -- key classes --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def line_system():
    sc = line_scenario(length=2.4, uavs=1)
    return build_sampled_system(sc)


def test_site_on_node_is_key_state_class(line_system):
    node = line_system.pos(1)
    spec = classify_assignment(line_system, TaskSiteAssignment.from_points([node]))
    assert [i for i, _ in spec.key_state_classes] == [0]
    assert spec.key_transition_classes == ()


def test_site_mid_edge_is_key_transition_class(line_system):
    u, v = line_system.road_ids[0], line_system.road_ids[1]
    a, b = line_system.pos(u), line_system.pos(v)
    mid = ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2)
    spec = classify_assignment(line_system, TaskSiteAssignment.from_points([mid]))
    assert spec.key_state_classes == ()
    (_, edges), = spec.key_transition_classes
    # independent oracle: every directed edge whose segment passes within 1 m of the site
    expected = set()
    for p, q in line_system.directed_edges():
        t, d = project_on_segment(mid, p, q)
        if d <= 0.001 and 0 < t < 1:
            expected.add((p, q))
    keyed = {(tuple(p), tuple(q)) for p, q in edges}
    assert {(tuple(round(c, 6) for c in p), tuple(round(c, 6) for c in q)) for p, q in expected} == keyed
    assert (tuple(a), tuple(b)) in keyed and (tuple(b), tuple(a)) in keyed


def test_site_off_every_edge_is_unsatisfiable(line_system):
    with pytest.raises(UnsatisfiableClassError):
        classify_assignment(line_system, TaskSiteAssignment.from_points([(9.5, 9.5)]))


def test_empty_spec_is_always_satisfied():
    assert satisfies_specification(Trajectory((one(0, 0, 1),)), SpecClasses())  # [TRIVIAL]


def test_missing_one_key_state_class():
    spec = SpecClasses(((0, frozenset({(0.0, 0.0)})), (1, frozenset({(5.0, 5.0)}))))
    traj = Trajectory((one(0, 0, 1),))
    assert not satisfies_specification(traj, spec)
    assert unsatisfied_classes(traj, spec) == [1]


# -- partial order ---------------------------------------------------------------------------


def test_compare_reflexive():
    x = one(1, 1, 100, 300)
    assert compare_states(x, x) == EQ


def test_more_energy_same_time_dominates():
    assert compare_states(one(1, 1, 100), one(1, 1, 110)) == GE
    assert compare_states(one(1, 1, 110), one(1, 1, 100)) == LE


def test_earlier_time_ranks_higher():
    assert compare_states(one(1, 1, 100, 600), one(1, 1, 100, 300)) == GE


def test_energy_up_time_later_is_incomparable():
    assert compare_states(one(1, 1, 100, 300), one(1, 1, 110, 600)) == INC


def test_different_positions_incomparable():
    assert compare_states(one(1, 1, 100), one(1, 2, 200)) == INC


def test_fleet_shape_mismatch():
    two = SystemState((uav(0, 0, 1), uav(0, 0, 1)))
    with pytest.raises(StructuralError):
        compare_states(one(0, 0, 1), two)


# -- monotonicity checker -------------------------------------------------------------------------


def test_single_state_self_loop_is_monotone():
    x = one(0, 0, 1, 0)
    assert check_monotonicity([x], [Label(1)], lambda a, l, b: True) == []


def test_constructed_violation_is_reported():
    low, high, nxt = one(0, 0, 10), one(0, 0, 20), one(1, 0, 5, 1)

    def rel(a, lab, b):
        return a == low and b == nxt  # the higher-energy state lacks the move

    out = check_monotonicity([low, high, nxt], [Label(1)], rel)
    assert len(out) == 1
    v = out[0]
    assert (v.x1, v.x1_next, v.x2) == (low, nxt, high)


def test_enumeration_budget_reports_partial_fraction():
    states = [one(0, 0, e) for e in range(10)]
    with pytest.raises(PartialResultError) as err:
        check_monotonicity(states, [Label(1)], lambda *a: True, max_checks=5)
    assert 0 < err.value.checked_fraction < 1
