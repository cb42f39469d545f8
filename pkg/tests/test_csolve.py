import time
from fractions import Fraction

import pytest

from iterplan.csolve import (
    And,
    ConstraintProblem,
    EncodingError,
    Eq,
    ExactlyOneOf,
    Not,
    Or,
    PartialModelError,
    Status,
    brute_force,
    check_sat,
    emit_smtlib,
    find_external_solver,
    find_violation,
    lin,
    run_external,
    verify_model,
)

from randprob import random_problem


def test_single_true_bool():
    p = ConstraintProblem()
    b = p.new_bool("b")
    p.add(b)
    r = check_sat(p, 5)
    assert r.status == Status.SAT and r[b] is True  # [TRIVIAL]


def test_contradictory_int_equalities():
    p = ConstraintProblem()
    x = p.new_int("x", 0, 1)
    p.add(Eq(x, 0), Eq(x, 1))
    assert check_sat(p, 5).status == Status.UNSAT  # [TRIVIAL]


def test_real_chain_is_solved_exactly():
    p = ConstraintProblem()
    t0, t1, t2 = (p.new_real(f"t{i}", 0, 1000) for i in range(3))
    go = p.new_bool("go")
    p.add(Eq(t0, 0), lin([(1, t1), (-1, t0)], "=", Fraction(1, 3)))
    p.add(Or(And(go, lin([(1, t2), (-1, t1)], ">=", 500)), lin([(1, t2)], "<=", -1)))
    r = check_sat(p, 5)
    assert r.sat and r[t1] == Fraction(1, 3) and r[t2] - r[t1] >= 500
    assert verify_model(p, r.model)


def test_reals_out_of_reach_are_unsat():
    p = ConstraintProblem()
    a, b = p.new_real("a", 0, 10), p.new_real("b", 0, 10)
    p.add(lin([(1, a), (1, b)], ">=", 25))
    assert check_sat(p, 5).status == Status.UNSAT


def test_exactly_one_of():
    p = ConstraintProblem()
    bs = [p.new_bool(f"b{i}") for i in range(4)]
    p.add(ExactlyOneOf(*bs), Not(bs[0]), Not(bs[1]), Not(bs[3]))
    r = check_sat(p, 5)
    assert [r[b] for b in bs] == [False, False, True, False]


def test_real_in_exactly_one_of_is_ill_sorted():
    p = ConstraintProblem()
    r = p.new_real("r", 0, 1)
    p.add(ExactlyOneOf(r))
    with pytest.raises(EncodingError):
        check_sat(p, 1)


def test_duplicate_names_rejected():
    p = ConstraintProblem()
    p.new_bool("a")
    with pytest.raises(EncodingError):
        p.new_int("a", 0, 1)


def test_verify_model_points_at_violated_atom():
    p = ConstraintProblem()
    x, y = p.new_int("x", 0, 5), p.new_int("y", 0, 5)
    atom = lin([(1, x), (1, y)], "<=", 4)
    p.add(atom)
    model = {x: 3, y: 2}
    assert not verify_model(p, model)
    assert find_violation(p, model) is atom  # [TRIVIAL]


def test_partial_model_is_an_error():
    p = ConstraintProblem()
    x = p.new_int("x", 0, 5)
    p.add(Eq(x, 2))
    with pytest.raises(PartialModelError):
        verify_model(p, {})


def test_budget_is_respected_on_a_hard_instance():
    # pigeonhole with 8 pigeons and 7 holes is hard for plain CDCL
    p = ConstraintProblem()
    n = 8
    x = [[p.new_bool(f"p{i}h{j}") for j in range(n - 1)] for i in range(n)]
    for i in range(n):
        p.add(Or(*x[i]))
    for j in range(n - 1):
        for a in range(n):
            for b in range(a + 1, n):
                p.add(Or(Not(x[a][j]), Not(x[b][j])))
    t0 = time.monotonic()
    r = check_sat(p, 0.5)
    assert time.monotonic() - t0 <= 0.5 + 0.5
    assert r.status in (Status.UNKNOWN, Status.UNSAT)


@pytest.mark.parametrize("seed", range(60))
def test_agrees_with_brute_force(seed):
    p = random_problem(seed)
    r = check_sat(p, 10)
    b = brute_force(p)
    assert r.sat == (b is not None)  # [DERIVED] exhaustive enumeration
    if r.sat:
        assert verify_model(p, r.model)


def test_deterministic_for_fixed_seed():
    p = random_problem(7, n_bool=6, n_int=4, n_cons=8)
    a, b = check_sat(p, 10, seed=3), check_sat(p, 10, seed=3)
    assert a.status == b.status and a.model == b.model


def test_emitted_text_maps_directly():
    p = ConstraintProblem()
    b = p.new_bool("b")
    p.new_int("x", 0, 5)
    p.add(b)
    text = emit_smtlib(p)
    assert "(declare-const b Bool)" in text  # [TRIVIAL]
    assert "(assert b)" in text
    assert "(assert (and (>= x 0) (<= x 5)))" in text
    assert text.rstrip().endswith("(exit)")


needs_external = pytest.mark.skipif(find_external_solver() is None, reason="no external SMT solver on PATH")


@needs_external
@pytest.mark.parametrize("seed", range(10))
def test_external_solver_agrees(seed):
    p = random_problem(1000 + seed, reals=2)
    ours, theirs = check_sat(p, 10), run_external(p, find_external_solver(), 30)
    assert ours.status == theirs.status  # [DERIVED] cross-solver agreement
    if theirs.sat:
        assert verify_model(p, theirs.model)
