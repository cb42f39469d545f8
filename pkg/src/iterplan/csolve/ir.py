"""Backend-neutral constraint IR over Bool, bounded Int and bounded Real variables."""

from __future__ import annotations

import itertools
from enum import Enum
from fractions import Fraction
from typing import Iterator, Mapping, Sequence, Union

Number = Union[int, float, Fraction]


class EncodingError(ValueError):
    """The problem is ill-sorted or cannot be encoded."""


class Sort(str, Enum):
    BOOL = "Bool"
    INT = "Int"
    REAL = "Real"


class Expr:
    """Base class of Boolean-valued formulas."""

    __slots__ = ()

    def __and__(self, other):
        return And(self, other)

    def __or__(self, other):
        return Or(self, other)

    def __invert__(self):
        return Not(self)

    def __rshift__(self, other):
        return Implies(self, other)


class Var(Expr):
    __slots__ = ("id", "name", "sort", "lo", "hi")

    def __init__(self, id: int, name: str, sort: Sort, lo: Number | None = None, hi: Number | None = None):
        self.id = id
        self.name = name
        self.sort = sort
        self.lo = lo
        self.hi = hi

    def __repr__(self) -> str:
        if self.sort == Sort.BOOL:
            return f"{self.name}:Bool"
        return f"{self.name}:{self.sort.value}[{self.lo},{self.hi}]"

    def __hash__(self) -> int:
        return hash(("var", self.id))

    def __eq__(self, other) -> bool:
        return isinstance(other, Var) and other.id == self.id

    def __lt__(self, other: "Var") -> bool:
        return self.id < other.id

    def domain(self) -> range:
        if self.sort == Sort.BOOL:
            return range(0, 2)
        if self.sort != Sort.INT:
            raise EncodingError(f"{self.name} has no finite domain")
        return range(self.lo, self.hi + 1)


class _Node(Expr):
    __slots__ = ("args", "_h")
    tag = "?"

    def __init__(self, *args):
        if len(args) == 1 and isinstance(args[0], (list, tuple)) and self.tag in ("and", "or", "one"):
            args = tuple(args[0])
        self.args = tuple(args)
        self._h = hash((self.tag, self.args))

    def __hash__(self) -> int:
        return self._h

    def __eq__(self, other) -> bool:
        return type(other) is type(self) and other.args == self.args

    def __repr__(self) -> str:
        return f"{type(self).__name__}({', '.join(map(repr, self.args))})"


class Const(_Node):
    tag = "const"

    @property
    def value(self) -> bool:
        return bool(self.args[0])


TRUE = Const(True)
FALSE = Const(False)


class Not(_Node):
    tag = "not"

    @property
    def arg(self) -> Expr:
        return self.args[0]


class And(_Node):
    tag = "and"


class Or(_Node):
    tag = "or"


class Implies(_Node):
    tag = "implies"

    @property
    def lhs(self) -> Expr:
        return self.args[0]

    @property
    def rhs(self) -> Expr:
        return self.args[1]


class ExactlyOneOf(_Node):
    tag = "one"


class Eq(_Node):
    """Variable equals a constant."""

    tag = "eq"

    @property
    def var(self) -> Var:
        return self.args[0]

    @property
    def value(self) -> Number:
        return self.args[1]


class LinearAtom(_Node):
    """sum(coef * var) op rhs with op in {'=', '<=', '>='}."""

    tag = "lin"
    OPS = ("=", "<=", ">=")

    def __init__(self, terms, op: str, rhs: Number):
        if op not in self.OPS:
            raise EncodingError(f"unknown comparison {op!r}")
        merged: dict[Var, Fraction] = {}
        for c, v in terms:
            merged[v] = merged.get(v, Fraction(0)) + Fraction(c)
        terms = tuple(sorted(((c, v) for v, c in merged.items() if c != 0), key=lambda t: t[1].id))
        super().__init__(terms, op, Fraction(rhs))

    @property
    def terms(self) -> tuple[tuple[Fraction, Var], ...]:
        return self.args[0]

    @property
    def op(self) -> str:
        return self.args[1]

    @property
    def rhs(self) -> Fraction:
        return self.args[2]

    @property
    def vars(self) -> list[Var]:
        return [v for _, v in self.terms]

    def holds(self, lhs: Fraction, tol: Fraction = Fraction(0)) -> bool:
        if self.op == "=":
            return abs(lhs - self.rhs) <= tol
        if self.op == "<=":
            return lhs <= self.rhs + tol
        return lhs >= self.rhs - tol


def lin(terms: Sequence[tuple[Number, Var]], op: str, rhs: Number) -> LinearAtom:
    return LinearAtom(tuple(terms), op, rhs)


class ConstraintProblem:
    """A set of variables plus asserted constraints. Build once, then treat as immutable."""

    def __init__(self, name: str = "problem"):
        self.name = name
        self.vars: list[Var] = []
        self.constraints: list[Expr] = []
        self._names: set[str] = set()

    def _new(self, name: str, sort: Sort, lo=None, hi=None) -> Var:
        if name in self._names:
            raise EncodingError(f"duplicate variable name {name!r}")
        self._names.add(name)
        v = Var(len(self.vars), name, sort, lo, hi)
        self.vars.append(v)
        return v

    def new_bool(self, name: str) -> Var:
        return self._new(name, Sort.BOOL)

    def new_int(self, name: str, lo: int, hi: int) -> Var:
        if int(lo) != lo or int(hi) != hi or lo > hi:
            raise EncodingError(f"bad Int domain [{lo}, {hi}] for {name}")
        return self._new(name, Sort.INT, int(lo), int(hi))

    def new_real(self, name: str, lo: Number, hi: Number) -> Var:
        lo, hi = Fraction(lo), Fraction(hi)
        if lo > hi:
            raise EncodingError(f"bad Real domain [{lo}, {hi}] for {name}")
        return self._new(name, Sort.REAL, lo, hi)

    def add(self, *constraints: Expr) -> None:
        for c in constraints:
            if not isinstance(c, Expr):
                raise EncodingError(f"not a constraint: {c!r}")
            self.constraints.append(c)

    def var(self, name: str) -> Var:
        for v in self.vars:
            if v.name == name:
                return v
        raise KeyError(name)

    def check_sorts(self) -> None:
        for c in self.constraints:
            _check(c, self)

    @property
    def finite(self) -> bool:
        return all(v.sort != Sort.REAL for v in self.vars)


def _check(e: Expr, p: ConstraintProblem, in_one: bool = False) -> None:
    if isinstance(e, Var):
        if e.sort != Sort.BOOL:
            raise EncodingError(f"{e.name} used as a formula but has sort {e.sort.value}")
        if e.id >= len(p.vars) or p.vars[e.id] is not e and p.vars[e.id] != e:
            raise EncodingError(f"{e.name} does not belong to this problem")
        return
    if isinstance(e, Const):
        return
    if isinstance(e, Eq):
        v = e.var
        if not isinstance(v, Var):
            raise EncodingError("Eq needs a variable on the left")
        if v.sort == Sort.REAL and in_one:
            raise EncodingError("Real atom inside ExactlyOneOf")
        if v.sort == Sort.BOOL and e.value not in (True, False, 0, 1):
            raise EncodingError(f"Bool {v.name} compared with {e.value!r}")
        return
    if isinstance(e, LinearAtom):
        for c, v in e.terms:
            if v.sort == Sort.BOOL:
                raise EncodingError(f"Bool {v.name} inside a linear atom")
            if v.sort == Sort.REAL and in_one:
                raise EncodingError("Real atom inside ExactlyOneOf")
        return
    if isinstance(e, ExactlyOneOf):
        for a in e.args:
            _check(a, p, True)
        return
    if isinstance(e, (Not, And, Or, Implies)):
        for a in e.args:
            _check(a, p, in_one)
        return
    raise EncodingError(f"unknown constraint node {e!r}")


# -- evaluation ------------------------------------------------------------------


class PartialModelError(ValueError):
    pass


def _value(v: Var, model: Mapping[Var, object]):
    try:
        return model[v]
    except KeyError:
        raise PartialModelError(f"model has no value for {v.name}") from None


def evaluate(e: Expr, model: Mapping[Var, object], tol: Fraction = Fraction(0)) -> bool:
    if isinstance(e, Var):
        return bool(_value(e, model))
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Not):
        return not evaluate(e.arg, model, tol)
    if isinstance(e, And):
        return all(evaluate(a, model, tol) for a in e.args)
    if isinstance(e, Or):
        return any(evaluate(a, model, tol) for a in e.args)
    if isinstance(e, Implies):
        return (not evaluate(e.lhs, model, tol)) or evaluate(e.rhs, model, tol)
    if isinstance(e, ExactlyOneOf):
        return sum(1 for a in e.args if evaluate(a, model, tol)) == 1
    if isinstance(e, Eq):
        val = _value(e.var, model)
        if e.var.sort == Sort.REAL:
            return abs(Fraction(val) - Fraction(e.value)) <= tol
        if e.var.sort == Sort.BOOL:
            return bool(val) == bool(e.value)
        return val == e.value
    if isinstance(e, LinearAtom):
        lhs = sum((c * Fraction(_value(v, model)) for c, v in e.terms), Fraction(0))
        return e.holds(lhs, tol)
    raise EncodingError(f"unknown node {e!r}")


def in_domain(v: Var, value) -> bool:
    if v.sort == Sort.BOOL:
        return isinstance(value, bool) or value in (0, 1)
    if v.sort == Sort.INT:
        return int(value) == value and v.lo <= value <= v.hi
    return v.lo <= Fraction(value) <= v.hi


def find_violation(problem: ConstraintProblem, model: Mapping[Var, object], tol: float = 1e-9) -> Expr | Var | None:
    """First variable out of domain or constraint violated under `model`, else None."""
    t = Fraction(tol)
    for v in problem.vars:
        val = _value(v, model)
        if v.sort == Sort.REAL:
            if not (v.lo - t <= Fraction(val) <= v.hi + t):
                return v
        elif not in_domain(v, val):
            return v
    for c in problem.constraints:
        if not evaluate(c, model, t):
            return c
    return None


def verify_model(problem: ConstraintProblem, model: Mapping[Var, object], tol: float = 1e-9) -> bool:
    return find_violation(problem, model, tol) is None


def iter_subexpressions(e: Expr) -> Iterator[Expr]:
    yield e
    if isinstance(e, (Not, And, Or, Implies, ExactlyOneOf)):
        for a in e.args:
            yield from iter_subexpressions(a)


def brute_force(problem: ConstraintProblem) -> dict[Var, object] | None:
    """Exhaustive search over a finite problem; reference oracle for tests."""
    if not problem.finite:
        raise EncodingError("brute force needs a finite problem")
    doms = [[False, True] if v.sort == Sort.BOOL else list(v.domain()) for v in problem.vars]
    for combo in itertools.product(*doms):
        model = dict(zip(problem.vars, combo))
        if all(evaluate(c, model) for c in problem.constraints):
            return model
    return None
