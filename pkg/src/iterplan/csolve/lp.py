"""Exact rational feasibility for conjunctions of linear (in)equalities.

A small two-phase simplex over `Fraction`s with Bland's rule, preceded by
Gaussian elimination of equalities. Strict inequalities are handled by
maximizing a shared slack.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Hashable, Sequence

Row = tuple[dict[Hashable, Fraction], str, Fraction]  # coefficients, op, rhs; op in =,<=,>=,<,>

ZERO = Fraction(0)


def _substitute(coeffs: dict, rhs: Fraction, var, expr: dict, const: Fraction) -> tuple[dict, Fraction]:
    """Replace `var` by (const + expr) in sum(coeffs) ... rhs."""
    c = coeffs.get(var)
    if c is None:
        return coeffs, rhs
    out = dict(coeffs)
    del out[var]
    for k, a in expr.items():
        v = out.get(k, ZERO) + c * a
        if v == 0:
            out.pop(k, None)
        else:
            out[k] = v
    return out, rhs - c * const


def solve_lp(rows: Sequence[Row], bounds: dict[Hashable, tuple[Fraction, Fraction]]) -> dict[Hashable, Fraction] | None:
    """A rational point satisfying every row within `bounds`, or None."""
    rows = [({k: Fraction(v) for k, v in c.items() if v != 0}, op, Fraction(r)) for c, op, r in rows]
    bounds = {k: (Fraction(lo), Fraction(hi)) for k, (lo, hi) in bounds.items()}
    for c, _, _ in rows:
        for k in c:
            bounds.setdefault(k, (Fraction(-10**9), Fraction(10**9)))

    # eliminate equalities: var = const + expr
    elim: list[tuple[Hashable, dict, Fraction]] = []
    pending = []
    work = rows
    while True:
        pick = None
        for i, (c, op, r) in enumerate(work):
            if op == "=" and c:
                pick = i
                break
        if pick is None:
            break
        c, _, r = work.pop(pick)
        var = min(c, key=lambda k: (repr(type(k)), repr(k)))
        a = c[var]
        expr = {k: -v / a for k, v in c.items() if k != var}
        const = r / a
        elim.append((var, expr, const))
        new = []
        for c2, op2, r2 in work:
            c2, r2 = _substitute(c2, r2, var, expr, const)
            new.append((c2, op2, r2))
        work = new
        # the eliminated variable keeps its bounds as inequalities on the rest
        lo, hi = bounds[var]
        pending.append((expr, const, lo, hi))
        for i, (e2, k2, lo2, hi2) in enumerate(pending[:-1]):
            if var in e2:
                e3, negk = _substitute(e2, -k2, var, expr, const)
                pending[i] = (e3, -negk, lo2, hi2)
        for i, (v2, e2, k2) in enumerate(elim[:-1]):
            if var in e2:
                e3, negk = _substitute(e2, -k2, var, expr, const)
                elim[i] = (v2, e3, -negk)
    for expr, const, lo, hi in pending:
        work.append((dict(expr), ">=", lo - const))
        work.append((dict(expr), "<=", hi - const))

    # trivial rows
    rest = []
    for c, op, r in work:
        if not c:
            ok = {"=": r == 0, "<=": 0 <= r, ">=": 0 >= r, "<": 0 < r, ">": 0 > r}[op]
            if not ok:
                return None
            continue
        rest.append((c, op, r))

    eliminated = {v for v, _, _ in elim}
    free_vars = sorted({k for c, _, _ in rest for k in c} - eliminated, key=repr)
    point = _simplex(rest, {k: bounds[k] for k in free_vars})
    if point is None:
        return None
    for k in bounds:
        if k not in point and k not in eliminated:
            point[k] = _pick(bounds[k])
    for var, expr, const in reversed(elim):
        point[var] = const + sum((a * point[k] for k, a in expr.items()), ZERO)
    return point


def _simplex(rows: list[Row], bounds: dict[Hashable, tuple[Fraction, Fraction]]) -> dict[Hashable, Fraction] | None:
    names = list(bounds)
    if not rows:
        return {k: _pick(bounds[k]) for k in names}
    col = {k: i for i, k in enumerate(names)}
    n = len(names)
    strict = any(op in ("<", ">") for _, op, _ in rows)
    s_col = n if strict else None
    ncols = n + (1 if strict else 0)

    # y = x - lo >= 0
    std: list[tuple[dict[int, Fraction], str, Fraction]] = []
    for c, op, r in rows:
        cc = {}
        rr = r
        for k, a in c.items():
            cc[col[k]] = a
            rr -= a * bounds[k][0]
        if op == "<":
            cc[s_col] = Fraction(1)
            op = "<="
        elif op == ">":
            cc[s_col] = Fraction(-1)
            op = ">="
        std.append((cc, op, rr))
    for k in names:
        lo, hi = bounds[k]
        std.append(({col[k]: Fraction(1)}, "<=", hi - lo))
    if strict:
        std.append(({s_col: Fraction(1)}, "<=", Fraction(1)))

    # tableau rows: dict col->coef, rhs; columns beyond ncols are slacks/artificials
    tab: list[dict[int, Fraction]] = []
    rhs: list[Fraction] = []
    basis: list[int] = []
    artificial: set[int] = set()
    nxt = ncols
    for cc, op, rr in std:
        if rr < 0:
            cc = {k: -v for k, v in cc.items()}
            rr = -rr
            op = {"<=": ">=", ">=": "<=", "=": "="}[op]
        row = dict(cc)
        if op == "<=":
            row[nxt] = Fraction(1)
            basis.append(nxt)
            nxt += 1
        else:
            if op == ">=":
                row[nxt] = Fraction(-1)
                nxt += 1
            row[nxt] = Fraction(1)
            artificial.add(nxt)
            basis.append(nxt)
            nxt += 1
        tab.append(row)
        rhs.append(rr)

    def pivot(r: int, c: int) -> None:
        p = tab[r][c]
        row = {k: v / p for k, v in tab[r].items()}
        tab[r] = row
        rhs[r] = rhs[r] / p
        for i in range(len(tab)):
            if i == r:
                continue
            f = tab[i].get(c)
            if f is None:
                continue
            ri = tab[i]
            for k, v in row.items():
                nv = ri.get(k, ZERO) - f * v
                if nv == 0:
                    ri.pop(k, None)
                else:
                    ri[k] = nv
            rhs[i] -= f * rhs[r]
        basis[r] = c

    def optimize(obj: dict[int, Fraction], banned: set[int]) -> Fraction:
        """Maximize obj·x; returns the optimum (bounded here by construction)."""
        while True:
            # reduced costs: obj_j - sum_i obj_basis(i) * tab[i][j]
            red: dict[int, Fraction] = dict(obj)
            for i, b in enumerate(basis):
                cb = obj.get(b, ZERO)
                if cb == 0:
                    continue
                for k, v in tab[i].items():
                    red[k] = red.get(k, ZERO) - cb * v
            in_basis = set(basis)
            enter = None
            for k in sorted(red):
                if k not in in_basis and k not in banned and red[k] > 0:
                    enter = k
                    break
            if enter is None:
                return sum((obj.get(b, ZERO) * rhs[i] for i, b in enumerate(basis)), ZERO)
            best = None
            for i in range(len(tab)):
                a = tab[i].get(enter, ZERO)
                if a > 0:
                    ratio = rhs[i] / a
                    if best is None or ratio < best[0] or (ratio == best[0] and basis[i] < basis[best[1]]):
                        best = (ratio, i)
            if best is None:
                return Fraction(10**18)  # unbounded; cannot happen with bounded variables
            pivot(best[1], enter)

    if artificial:
        obj = {a: Fraction(-1) for a in artificial}
        if optimize(obj, set()) < 0:
            return None
        # drive remaining artificials out of the basis
        for i, b in enumerate(list(basis)):
            if b in artificial:
                for k in sorted(tab[i]):
                    if k not in artificial and tab[i][k] != 0:
                        pivot(i, k)
                        break
    if strict:
        if optimize({s_col: Fraction(1)}, artificial) <= 0:
            return None
    value = [ZERO] * ncols
    for i, b in enumerate(basis):
        if b < ncols:
            value[b] = rhs[i]
    return {k: bounds[k][0] + value[col[k]] for k in names}


def _pick(b: tuple[Fraction, Fraction]) -> Fraction:
    lo, hi = b
    return ZERO if lo <= 0 <= hi else lo
