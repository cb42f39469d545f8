"""SMT-LIB2 emission and a subprocess bridge to an external solver."""

from __future__ import annotations

import re
import shutil
import subprocess
from fractions import Fraction
from typing import Iterator

from .ir import And, ConstraintProblem, Const, Eq, ExactlyOneOf, Expr, Implies, LinearAtom, Not, Or, Sort, Var
from .solver import SolveResult, Status

_SIMPLE = re.compile(r"^[A-Za-z~!@$%^&*_+=<>.?/\-][A-Za-z0-9~!@$%^&*_+=<>.?/\-]*$")


def symbol(name: str) -> str:
    if _SIMPLE.match(name):
        return name
    return "|" + name.replace("|", "_").replace("\\", "_") + "|"


def number(q, sort: Sort) -> str:
    q = Fraction(q)
    if sort == Sort.INT and q.denominator == 1:
        s = str(abs(q.numerator))
    elif q.denominator == 1:
        s = f"{abs(q.numerator)}.0"
    else:
        s = f"(/ {abs(q.numerator)}.0 {q.denominator}.0)"
    return f"(- {s})" if q < 0 else s


def _atom_sort(terms) -> Sort:
    return Sort.REAL if any(v.sort == Sort.REAL for _, v in terms) else Sort.INT


def _term(e: Expr) -> str:
    if isinstance(e, Var):
        return symbol(e.name)
    if isinstance(e, Const):
        return "true" if e.value else "false"
    if isinstance(e, Not):
        return f"(not {_term(e.arg)})"
    if isinstance(e, And):
        return "(and " + " ".join(_term(a) for a in e.args) + ")" if e.args else "true"
    if isinstance(e, Or):
        return "(or " + " ".join(_term(a) for a in e.args) + ")" if e.args else "false"
    if isinstance(e, Implies):
        return f"(=> {_term(e.lhs)} {_term(e.rhs)})"
    if isinstance(e, ExactlyOneOf):
        if not e.args:
            return "false"
        parts = " ".join(f"(ite {_term(a)} 1 0)" for a in e.args)
        return f"(= (+ 0 {parts}) 1)"
    if isinstance(e, Eq):
        v = e.var
        if v.sort == Sort.BOOL:
            return symbol(v.name) if e.value else f"(not {symbol(v.name)})"
        return f"(= {symbol(v.name)} {number(e.value, v.sort)})"
    if isinstance(e, LinearAtom):
        sort = _atom_sort(e.terms)
        if not e.terms:
            lhs = number(0, sort)
        else:
            parts = []
            for c, v in e.terms:
                name = symbol(v.name)
                if sort == Sort.REAL and v.sort == Sort.INT:
                    name = f"(to_real {name})"
                parts.append(name if c == 1 else f"(* {number(c, sort)} {name})")
            lhs = parts[0] if len(parts) == 1 else "(+ " + " ".join(parts) + ")"
        if sort == Sort.INT and any(c.denominator != 1 for c, _ in e.terms) or (sort == Sort.INT and e.rhs.denominator != 1):
            # scale to integer coefficients
            den = 1
            for c, _ in e.terms:
                den = den * c.denominator // _gcd(den, c.denominator)
            den = den * e.rhs.denominator // _gcd(den, e.rhs.denominator)
            scaled = LinearAtom(tuple((c * den, v) for c, v in e.terms), e.op, e.rhs * den)
            return _term(scaled)
        return f"({e.op} {lhs} {number(e.rhs, sort)})"
    raise ValueError(f"cannot print {e!r}")


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def logic_of(problem: ConstraintProblem) -> str:
    sorts = {v.sort for v in problem.vars}
    if Sort.REAL in sorts and Sort.INT in sorts:
        return "QF_LIRA"
    if Sort.REAL in sorts:
        return "QF_LRA"
    if Sort.INT in sorts:
        return "QF_LIA"
    return "QF_UF"


def emit_smtlib(problem: ConstraintProblem, get_model: bool = True) -> str:
    lines = [f"; {problem.name}", f"(set-logic {logic_of(problem)})"]
    if get_model:
        lines.append("(set-option :produce-models true)")
    for v in problem.vars:
        lines.append(f"(declare-const {symbol(v.name)} {v.sort.value})")
        if v.sort != Sort.BOOL:
            lo, hi = number(v.lo, v.sort), number(v.hi, v.sort)
            lines.append(f"(assert (and (>= {symbol(v.name)} {lo}) (<= {symbol(v.name)} {hi})))")
    for c in problem.constraints:
        lines.append(f"(assert {_term(c)})")
    lines.append("(check-sat)")
    if get_model:
        lines.append("(get-model)")
    lines.append("(exit)")
    return "\n".join(lines) + "\n"


# -- reading solver output -----------------------------------------------------


def _tokens(text: str) -> Iterator[str]:
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
        elif ch in "()":
            yield ch
            i += 1
        elif ch == "|":
            j = text.index("|", i + 1)
            yield text[i : j + 1]
            i = j + 1
        elif ch == '"':
            j = text.index('"', i + 1)
            yield text[i : j + 1]
            i = j + 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in "()":
                j += 1
            yield text[i:j]
            i = j


def parse_sexprs(text: str) -> list:
    stack: list[list] = [[]]
    for tok in _tokens(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    return stack[0]


def _value(sx):
    if isinstance(sx, str):
        if sx in ("true", "false"):
            return sx == "true"
        return Fraction(sx)
    head = sx[0]
    if head == "-" and len(sx) == 2:
        return -_value(sx[1])
    if head == "/":
        return _value(sx[1]) / _value(sx[2])
    if head == "to_real":
        return _value(sx[1])
    raise ValueError(f"unsupported model value {sx!r}")


def parse_model(sexprs: list, problem: ConstraintProblem) -> dict[Var, object]:
    by_name = {symbol(v.name): v for v in problem.vars}
    by_name.update({v.name: v for v in problem.vars})
    model: dict[Var, object] = {}

    def walk(sx):
        if isinstance(sx, list):
            if len(sx) == 5 and sx[0] == "define-fun" and sx[2] == []:
                name = sx[1]
                v = by_name.get(name) or by_name.get(name.strip("|"))
                if v is not None:
                    val = _value(sx[4])
                    model[v] = bool(val) if v.sort == Sort.BOOL else (int(val) if v.sort == Sort.INT else val)
                return
            for s in sx:
                walk(s)

    walk(sexprs)
    return model


def find_external_solver(candidates=("z3", "cvc5", "yices-smt2")) -> list[str] | None:
    for name in candidates:
        path = shutil.which(name)
        if path:
            return [path, "-in"] if name == "z3" else [path, "--lang=smt2"] if name == "cvc5" else [path]
    return None


def run_external(problem: ConstraintProblem, command: list[str], timeout: float = 60.0) -> SolveResult:
    text = emit_smtlib(problem)
    try:
        proc = subprocess.run(command, input=text, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        return SolveResult(Status.UNKNOWN)
    sx = parse_sexprs(proc.stdout)
    verdict = next((s for s in sx if isinstance(s, str)), "unknown")
    if verdict == "sat":
        return SolveResult(Status.SAT, parse_model(sx[1:], problem))
    if verdict == "unsat":
        return SolveResult(Status.UNSAT)
    return SolveResult(Status.UNKNOWN)
