import pytest

from iterplan.csolve import Status, check_sat, verify_model
from iterplan.csolve.solver import assignment_constraints
from iterplan.geometry import dist
from iterplan.plan import Infeasible, Plan, sites_hit
from iterplan.sampler import build_sampled_system, enumerate_states
from iterplan.scenario import Params
from iterplan.tdo import (
    InfeasibleByConstruction,
    TdoInstance,
    decode_tdo,
    encode_tdo,
    horizon_schedule,
    lower_horizon,
    solve_tdo,
    uncovered,
)
from iterplan.ts import SpecClasses, TaskSiteAssignment, classify_assignment, validate_trajectory
from iterplan.vehicles import Flag, SystemState, VehicleKind, VehicleState

from conftest import line_scenario

TINY = Params(B_max_a=4, B_max_g=4, hull_padding=0.6)


def tiny_system(site):
    sc = line_scenario(length=2.4, uavs=1, sites=[site], params=TINY)
    S = build_sampled_system(sc)
    return sc, S, classify_assignment(S, sc.assignment())


def one_hop(S, x, y):
    """Each vehicle moves at most one grid hop: an air pitch for UAVs, a road spacing for UGVs."""
    p = S.world.fleet
    for spec_j, a, b in zip(p.vehicles, x.vehicles, y.vehicles):
        reach = (S.cruise_v_g if spec_j.kind == VehicleKind.UGV else S.cruise_v_a) * S.gamma_d / 1000.0
        if dist(a.position, b.position) > reach + 1e-6:
            return False
    return True


def bfs_min_steps(S, x0, targets, k_max):
    """Fewest one-hop steps until some vehicle stands on a target node.

    Exhaustive search over the sampled states, with the physical transition oracle deciding energy feasibility.
    """
    states = enumerate_states(S, k_max + 1)
    by_time = {}
    for x in states:
        by_time.setdefault(x.time, []).append(x)
    hit = lambda x: any(v.position in targets for v in x.vehicles)  # noqa: E731
    if hit(x0):
        return 0
    frontier = {x0}
    for k in range(1, k_max + 1):
        cands = by_time.get(S.time_origin + k * S.gamma_d, [])
        frontier = {y for y in cands if any(one_hop(S, x, y) and S.is_transition(x, S.gamma_d, y) for x in frontier)}
        if any(hit(y) for y in frontier):
            return k
    return None


def test_schedule_grows_and_ends_at_cap():
    ks = horizon_schedule(2, 24)
    assert ks[0] == 2 and ks[-1] == 24
    assert all(b > a for a, b in zip(ks, ks[1:]))


def test_ugv_alone_already_on_site_needs_one_step():
    sc = line_scenario(length=2.4, uavs=0, sites=[(1.0, 1.0)])
    S = build_sampled_system(sc)
    spec = classify_assignment(S, sc.assignment())
    plan = solve_tdo(S, spec, sc.initial_state(), 4, 10, sites=sc.sites)
    assert isinstance(plan, Plan) and plan.horizon_steps == 1  # [TRIVIAL]
    assert plan.objective == 0.0  # covered before the first move, so the plan is cut at k=0
    inst = TdoInstance(S, spec, sc.initial_state(), 1)
    encode_tdo(inst)
    res = check_sat(inst.problem, 10)
    traj, _ = decode_tdo(inst, res.model, truncate=False)
    assert len(traj.states) == 2  # [TRIVIAL]


def test_empty_class_is_infeasible_by_construction():
    sc, S, _ = tiny_system((3.4, 1.0))
    bad = SpecClasses(((0, frozenset()),))
    with pytest.raises(InfeasibleByConstruction):
        encode_tdo(TdoInstance(S, bad, sc.initial_state(), 2))


@pytest.mark.parametrize("site", [(2.2, 1.0), (3.4, 1.0), (3.675, 0.995929214), (0.675, 0.995929214)])
def test_shortest_horizon_matches_exhaustive_search(site):
    sc, S, spec = tiny_system(site)
    x0 = sc.initial_state()
    expected = bfs_min_steps(S, x0, {site}, 4)  # [DERIVED] exhaustive enumeration
    plan = solve_tdo(S, spec, x0, 4, 30, sites=sc.sites, K_lo=1, growth=1.0)
    assert isinstance(plan, Plan)
    assert plan.horizon_steps == expected
    assert sites_hit(plan.implementation, sc.sites) == {0}


def test_short_of_one_move_is_unsat():
    sc = line_scenario(length=2.4, uavs=1)
    S = build_sampled_system(sc)
    air = next(i for i in S.adjacency_a[0] if i not in S.road_ids)
    site = S.pos(air)
    spec = classify_assignment(S, TaskSiteAssignment.from_points([site]))
    q = S.levels
    g, a = sc.initial_state().vehicles
    for levels, status in ((q.B_move_a - 1, Status.UNSAT), (q.B_move_a, Status.SAT)):
        uav = VehicleState(a.x, a.y, q.uav_energy(levels), Flag.UAV_FREE)
        x0 = SystemState((g, uav), 0.0)
        inst = TdoInstance(build_sampled_system(sc, extra_states=[x0]), spec, x0, 1)
        encode_tdo(inst)
        assert check_sat(inst.problem, 30).status == status  # [DERIVED]


def test_horizon_below_lower_bound_is_infeasible():
    sc, S, spec = tiny_system((3.4, 1.0))
    x0 = sc.initial_state()
    assert bfs_min_steps(S, x0, {(3.4, 1.0)}, 1) is None  # [DERIVED] nothing reaches it in one step
    assert isinstance(solve_tdo(S, spec, x0, 1, 10, K_lo=1), Infeasible)


def test_lower_horizon_never_exceeds_found_horizon(reference_system, reference_plan):
    S, spec, x0 = reference_system
    assert lower_horizon(S, spec, x0) <= reference_plan.horizon_steps


def test_reference_plan_is_valid_and_complete(reference, reference_system, reference_plan):
    S, spec, x0 = reference_system
    traj = reference_plan.trajectory
    assert traj.states[0] == x0
    assert validate_trajectory(S, traj)
    assert validate_trajectory(reference.world(), traj)  # continuous oracle after de-quantization
    assert uncovered(reference_plan, spec) == []
    assert sites_hit(reference_plan.implementation, reference.sites) == set(range(len(reference.sites)))
    assert reference_plan.horizon_steps <= reference.params.horizon_steps


def test_reference_energies_stay_in_range(reference, reference_plan):
    world = reference.world()
    caps = [world.model.capacity(v.kind) for v in world.fleet.vehicles]
    for x in reference_plan.trajectory.states:
        for v, cap in zip(x.vehicles, caps):
            assert 0 <= v.energy <= cap + 1e-9


def test_docked_flags_are_consistent(reference, reference_plan):
    fleet = reference.world().fleet
    for x in reference_plan.trajectory.states:
        for j, spec_j in enumerate(fleet.vehicles):
            v = x.vehicles[j]
            if spec_j.kind == VehicleKind.UGV:
                docked = [i for i in fleet.hosted_by(j) if x.vehicles[i].flag == Flag.UAV_DOCKED]
                assert v.flag == Flag(len(docked))
            elif v.flag == Flag.UAV_DOCKED:
                assert v.position == x.vehicles[spec_j.host].position


def test_decoded_model_round_trips():
    sc, S, spec = tiny_system((3.675, 0.995929214))
    x0 = sc.initial_state()
    inst = TdoInstance(S, spec, x0, 3)
    encode_tdo(inst)
    res = check_sat(inst.problem, 30)
    assert res.sat and verify_model(inst.problem, res.model)
    traj, sol = decode_tdo(inst, res.model, truncate=False)
    assert len(traj.states) == 4 and validate_trajectory(S, traj)
    # pin every variable to the model and re-solve
    inst.problem.add(*assignment_constraints(res.model))
    assert check_sat(inst.problem, 30).sat


def test_x0_off_the_sampled_nodes_is_rejected():
    sc, S, spec = tiny_system((3.4, 1.0))
    g, a = sc.initial_state().vehicles
    x0 = SystemState((g, VehicleState(5.0, 5.0, a.energy, Flag.UAV_FREE)), 0.0)
    with pytest.raises(ValueError):
        encode_tdo(TdoInstance(S, spec, x0, 2))


def test_budget_must_be_positive(reference_system):
    S, spec, x0 = reference_system
    with pytest.raises(ValueError):
        solve_tdo(S, spec, x0, 4, 0)
