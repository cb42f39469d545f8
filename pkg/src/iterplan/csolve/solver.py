"""Bundled solver: Tseitin/direct encoding to CNF, CDCL search, lazy linear theories.

Bool and Int structure is compiled to clauses and handed to Glucose (via
python-sat). Linear atoms over small Int domains are expanded into clauses;
larger ones and every atom touching a Real are checked lazily against each
candidate model, with blocking clauses on failure. Real feasibility is
decided exactly by the rational simplex in `lp`.
"""

from __future__ import annotations

import itertools
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping

from pysat.card import CardEnc, EncType
from pysat.formula import IDPool
from pysat.solvers import Glucose4

from .ir import (
    And,
    ConstraintProblem,
    Const,
    EncodingError,
    Eq,
    ExactlyOneOf,
    Expr,
    Implies,
    LinearAtom,
    Not,
    Or,
    Sort,
    Var,
    find_violation,
)
from .lp import solve_lp

log = logging.getLogger(__name__)

EXPAND_LIMIT = 4096  # max enumerated prefix assignments per Int linear atom


class Status(str, Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


@dataclass
class SolveResult:
    status: Status
    model: dict[Var, object] = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def sat(self) -> bool:
        return self.status == Status.SAT

    def __getitem__(self, v: Var):
        return self.model[v]


class _Compiler:
    def __init__(self, problem: ConstraintProblem):
        self.p = problem
        self.pool = IDPool()
        self.clauses: list[list[int]] = []
        self.true = self.pool.id(("true",))
        self.clauses.append([self.true])
        self.bool_lit: dict[Var, int] = {}
        self.int_lits: dict[Var, dict[int, int]] = {}
        self.cache: dict[Expr, int] = {}
        self.theory: list[tuple[int, LinearAtom]] = []  # literal <-> atom, checked lazily
        self.polarity = atom_polarity(problem.constraints)
        for v in problem.vars:
            if v.sort == Sort.BOOL:
                self.bool_lit[v] = self.pool.id(("b", v.id))
            elif v.sort == Sort.INT:
                self._declare_int(v)

    def _declare_int(self, v: Var) -> None:
        lits = {val: self.pool.id(("i", v.id, val)) for val in v.domain()}
        self.int_lits[v] = lits
        ls = list(lits.values())
        self.clauses.append(ls)
        if len(ls) <= 6:
            self.clauses += [[-a, -b] for a, b in itertools.combinations(ls, 2)]
        else:
            enc = CardEnc.atmost(ls, 1, vpool=self.pool, encoding=EncType.seqcounter)
            self.clauses += enc.clauses

    def eq_lit(self, v: Var, value) -> int:
        if v.sort == Sort.BOOL:
            return self.bool_lit[v] if bool(value) else -self.bool_lit[v]
        lits = self.int_lits[v]
        if int(value) != value or int(value) not in lits:
            return -self.true
        return lits[int(value)]

    def lit(self, e: Expr) -> int:
        if isinstance(e, Var):
            return self.bool_lit[e]
        if isinstance(e, Const):
            return self.true if e.value else -self.true
        got = self.cache.get(e)
        if got is not None:
            return got
        out = self._lit(e)
        self.cache[e] = out
        return out

    def _fresh(self) -> int:
        return self.pool.id(("aux", len(self.pool.obj2id)))

    def _lit(self, e: Expr) -> int:
        if isinstance(e, Not):
            return -self.lit(e.arg)
        if isinstance(e, Eq):
            if e.var.sort == Sort.REAL:
                return self.lit(LinearAtom(((1, e.var),), "=", e.value))
            return self.eq_lit(e.var, e.value)
        if isinstance(e, And):
            return self._and([self.lit(a) for a in e.args])
        if isinstance(e, Or):
            return -self._and([-self.lit(a) for a in e.args])
        if isinstance(e, Implies):
            return -self._and([self.lit(e.lhs), -self.lit(e.rhs)])
        if isinstance(e, ExactlyOneOf):
            ls = [self.lit(a) for a in e.args]
            t = self._fresh()
            # t -> exactly one
            self.clauses.append([-t] + ls)
            self.clauses += [[-t, -a, -b] for a, b in itertools.combinations(ls, 2)]
            # not t -> none or at least two
            for i, a in enumerate(ls):
                self.clauses.append([t, -a] + [b for j, b in enumerate(ls) if j != i])
            return t
        if isinstance(e, LinearAtom):
            return self._linear(e)
        raise EncodingError(f"cannot encode {e!r}")

    def _and(self, ls: list[int]) -> int:
        if not ls:
            return self.true
        if len(ls) == 1:
            return ls[0]
        t = self._fresh()
        for a in ls:
            self.clauses.append([-t, a])
        self.clauses.append([t] + [-a for a in ls])
        return t

    def _linear(self, e: LinearAtom) -> int:
        vs = e.vars
        if not vs:
            return self.true if e.holds(Fraction(0)) else -self.true
        t = self._fresh()
        if any(v.sort == Sort.REAL for v in vs):
            self.theory.append((t, e))
            return t
        order = sorted(vs, key=lambda v: (v.hi - v.lo, v.id))
        last = order[-1]
        prefix = order[:-1]
        size = 1
        for v in prefix:
            size *= v.hi - v.lo + 1
        if size > EXPAND_LIMIT:
            self.theory.append((t, e))
            return t
        coef = {v: c for c, v in e.terms}
        cl = coef[last]
        for combo in itertools.product(*(v.domain() for v in prefix)):
            partial = sum((coef[v] * val for v, val in zip(prefix, combo)), Fraction(0))
            good, bad = [], []
            for val in last.domain():
                (good if e.holds(partial + cl * val) else bad).append(self.int_lits[last][val])
            guard = [-self.int_lits[v][val] for v, val in zip(prefix, combo)]
            self.clauses.append([-t] + guard + good)
            self.clauses.append([t] + guard + bad)
        return t

    def assert_top(self, e: Expr) -> None:
        if isinstance(e, And):
            for a in e.args:
                self.assert_top(a)
        elif isinstance(e, Or):
            self.clauses.append([self.lit(a) for a in e.args])
        elif isinstance(e, Implies):
            lhs = e.lhs
            if isinstance(lhs, And):
                self.clauses.append([-self.lit(a) for a in lhs.args] + self._rhs_lits(e.rhs))
            else:
                self.clauses.append([-self.lit(lhs)] + self._rhs_lits(e.rhs))
        else:
            self.clauses.append([self.lit(e)])

    def _rhs_lits(self, e: Expr) -> list[int]:
        if isinstance(e, Or):
            return [self.lit(a) for a in e.args]
        return [self.lit(e)]


def atom_polarity(constraints) -> dict[LinearAtom, set[bool]]:
    """Signs under which each linear atom occurs; a one-sided atom needs checking in one direction only."""
    out: dict[LinearAtom, set[bool]] = {}

    def walk(e: Expr, sign: bool) -> None:
        if isinstance(e, LinearAtom):
            out.setdefault(e, set()).add(sign)
        elif isinstance(e, Eq) and e.var.sort == Sort.REAL:
            walk(LinearAtom(((1, e.var),), "=", e.value), sign)
        elif isinstance(e, Not):
            walk(e.arg, not sign)
        elif isinstance(e, (And, Or)):
            for a in e.args:
                walk(a, sign)
        elif isinstance(e, Implies):
            walk(e.lhs, not sign)
            walk(e.rhs, sign)
        elif isinstance(e, ExactlyOneOf):
            for a in e.args:
                walk(a, sign)
                walk(a, not sign)

    for c in constraints:
        walk(c, True)
    return out


def _relevant(comp: "_Compiler", atom: LinearAtom, value: bool) -> bool:
    signs = comp.polarity.get(atom)
    return signs is None or value in signs


def _int_value(comp: _Compiler, v: Var, true_lits: set[int]) -> int:
    for val, l in comp.int_lits[v].items():
        if l in true_lits:
            return val
    raise RuntimeError(f"no value decoded for {v.name}")


def _theory_conflict(comp: _Compiler, assignment: set[int], model: dict[Var, object]) -> tuple[list[int] | None, dict]:
    """Check lazy atoms; return a blocking clause or None plus real values."""
    # integer-only atoms first: cheap and precise blocking clauses
    for t, atom in comp.theory:
        if any(v.sort == Sort.REAL for v in atom.vars):
            continue
        lhs = sum((c * model[v] for c, v in atom.terms), Fraction(0))
        value = t in assignment
        if not _relevant(comp, atom, value):
            continue
        if atom.holds(lhs) != value:
            return [(-t if value else t)] + [-comp.int_lits[v][model[v]] for v in atom.vars], {}
    rows = []
    support = []
    reals: dict[Var, tuple[Fraction, Fraction]] = {}
    for t, atom in comp.theory:
        if not any(v.sort == Sort.REAL for v in atom.vars):
            continue
        value = t in assignment
        if not _relevant(comp, atom, value):
            continue
        coeffs: dict[Var, Fraction] = {}
        rhs = atom.rhs
        ints = []
        for c, v in atom.terms:
            if v.sort == Sort.REAL:
                coeffs[v] = c
                reals[v] = (v.lo, v.hi)
            else:
                rhs -= c * model[v]
                ints.append(v)
        op = atom.op
        if not value:
            op = {"<=": ">", ">=": "<", "=": "!="}[op]
        lit = t if value else -t
        support.append((lit, ints))
        if op == "!=":
            rows.append((coeffs, "!=", rhs, len(support) - 1))
        else:
            rows.append((coeffs, op, rhs, len(support) - 1))
    if not rows:
        return None, {}
    point = _feasible(rows, reals)
    if point is not None:
        return None, point
    core = _shrink_core(rows, reals)
    clause = set()
    for _, _, _, si in core:
        lit, ints = support[si]
        clause.add(-lit)
        clause.update(-comp.int_lits[v][model[v]] for v in ints)
    return sorted(clause, key=abs), {}


def _feasible(rows, reals):
    """Feasibility with disequalities split into two strict cases."""
    plain = [(c, op, r) for c, op, r, _ in rows if op != "!="]
    neq = [(c, r) for c, op, r, _ in rows if op == "!="]
    if len(neq) > 10:
        neq = neq[:10]  # beyond this the split is impractical; remaining ones checked below
    for signs in itertools.product(("<", ">"), repeat=len(neq)):
        extra = [(c, s, r) for (c, r), s in zip(neq, signs)]
        pt = solve_lp(plain + extra, dict(reals))
        if pt is not None and all(
            sum((a * pt[k] for k, a in c.items()), Fraction(0)) != r for c, op, r, _ in rows if op == "!="
        ):
            return pt
    return None


def _shrink_core(rows, reals):
    if len(rows) > 40:
        return rows
    core = list(rows)
    i = 0
    while i < len(core):
        trial = core[:i] + core[i + 1 :]
        if _feasible(trial, reals) is None:
            core = trial
        else:
            i += 1
    return core


def check_sat(problem: ConstraintProblem, budget: float | None = None, seed: int = 0) -> SolveResult:
    """Decide `problem` within `budget` seconds of wall-clock time."""
    start = time.monotonic()
    deadline = None if budget is None else start + budget
    problem.check_sorts()
    comp = _Compiler(problem)
    for c in problem.constraints:
        comp.assert_top(c)
    if deadline is not None and time.monotonic() > deadline:
        return SolveResult(Status.UNKNOWN, elapsed=time.monotonic() - start)

    solver = Glucose4(bootstrap_with=comp.clauses)
    try:
        if seed:
            rng = random.Random(seed)
            solver.set_phases([v if rng.random() < 0.5 else -v for v in range(1, comp.pool.top + 1)])
        while True:
            remaining = None if deadline is None else deadline - time.monotonic()
            if remaining is not None and remaining <= 0:
                return SolveResult(Status.UNKNOWN, elapsed=time.monotonic() - start)
            timer = None
            if remaining is not None:
                timer = threading.Timer(remaining, solver.interrupt)
                timer.start()
            try:
                outcome = solver.solve_limited(expect_interrupt=True)
            finally:
                if timer is not None:
                    timer.cancel()
            solver.clear_interrupt()
            if outcome is None:
                return SolveResult(Status.UNKNOWN, elapsed=time.monotonic() - start)
            if outcome is False:
                return SolveResult(Status.UNSAT, elapsed=time.monotonic() - start)
            true_lits = {l for l in solver.get_model() if l > 0}
            model: dict[Var, object] = {}
            for v in problem.vars:
                if v.sort == Sort.BOOL:
                    model[v] = comp.bool_lit[v] in true_lits
                elif v.sort == Sort.INT:
                    model[v] = _int_value(comp, v, true_lits)
            clause, reals = _theory_conflict(comp, true_lits, model)
            if clause is not None:
                solver.add_clause(clause)
                continue
            for v in problem.vars:
                if v.sort == Sort.REAL:
                    model[v] = reals.get(v, Fraction(0) if v.lo <= 0 <= v.hi else v.lo)
            bad = find_violation(problem, model)
            if bad is not None:
                raise RuntimeError(f"internal error: model violates {bad!r}")
            return SolveResult(Status.SAT, model, time.monotonic() - start)
    finally:
        solver.delete()


def model_by_name(result: SolveResult) -> dict[str, object]:
    return {v.name: val for v, val in result.model.items()}


def assignment_constraints(model: Mapping[Var, object]) -> list[Expr]:
    """Pin every variable of `model` (round-trip helper)."""
    return [Eq(v, val) for v, val in model.items()]
