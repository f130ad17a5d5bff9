"""Small dense linear programs.

``LinearProgram`` collects a maximization problem row by row. Exact problems
(Fraction coefficients) are solved by a two-phase tableau simplex with Bland's
rule, so results are exact rationals. Float problems go to SciPy's HiGHS by
default; the in-house simplex is also available for them (``backend="simplex"``)
and is used to cross-check HiGHS in the tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

PIVOT_TOL = 1e-12


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: list = field(default_factory=list)
    objective: object = None
    # one multiplier per inequality row, in insertion order (>= 0 at optimum)
    duals_ub: list = field(default_factory=list)


class LinearProgram:
    """maximize c.x subject to A_ub x <= b_ub, A_eq x = b_eq, x >= 0 (except free vars)."""

    def __init__(self, nvars: int, exact: bool = False):
        self.nvars = nvars
        self.exact = exact
        self.c = {}
        self.ub_rows: list[tuple[dict, object]] = []
        self.eq_rows: list[tuple[dict, object]] = []

    def set_objective(self, coeffs: dict):
        self.c = dict(coeffs)

    def add_le(self, coeffs: dict, rhs):
        self.ub_rows.append((dict(coeffs), rhs))

    def add_ge(self, coeffs: dict, rhs):
        self.ub_rows.append(({k: -v for k, v in coeffs.items()}, -rhs))

    def add_eq(self, coeffs: dict, rhs):
        self.eq_rows.append((dict(coeffs), rhs))

    def solve(self, free=(), backend: str | None = None) -> LpResult:
        if backend is None:
            backend = "simplex" if self.exact else "highs"
        if backend == "highs":
            return self._solve_highs(set(free))
        if backend == "simplex":
            return self._solve_simplex(set(free))
        raise ValueError(f"unknown backend {backend!r}")

    # -- HiGHS ---------------------------------------------------------------
    def _dense(self, rows):
        A = np.zeros((len(rows), self.nvars))
        b = np.zeros(len(rows))
        for r, (coeffs, rhs) in enumerate(rows):
            for k, v in coeffs.items():
                A[r, k] += float(v)
            b[r] = float(rhs)
        return A, b

    def _solve_highs(self, free) -> LpResult:
        from scipy.optimize import linprog

        c = np.zeros(self.nvars)
        for k, v in self.c.items():
            c[k] = -float(v)
        kw = {}
        if self.ub_rows:
            kw["A_ub"], kw["b_ub"] = self._dense(self.ub_rows)
        if self.eq_rows:
            kw["A_eq"], kw["b_eq"] = self._dense(self.eq_rows)
        bounds = [(None, None) if k in free else (0, None) for k in range(self.nvars)]
        res = linprog(c, bounds=bounds, method="highs", **kw)
        if res.status == 2:
            return LpResult("infeasible")
        if res.status == 3:
            return LpResult("unbounded")
        if res.status != 0:
            raise RuntimeError(f"HiGHS failed: {res.message}")
        duals = list(-res.ineqlin.marginals) if self.ub_rows else []
        return LpResult("optimal", list(res.x), -res.fun, duals)

    # -- tableau simplex -----------------------------------------------------
    def _solve_simplex(self, free) -> LpResult:
        num = Fraction if self.exact else float
        zero, one = num(0), num(1)
        tol = 0 if self.exact else PIVOT_TOL

        # column map: each original var -> (plus column, minus column or None)
        cols = []
        ncol = 0
        for k in range(self.nvars):
            if k in free:
                cols.append((ncol, ncol + 1))
                ncol += 2
            else:
                cols.append((ncol, None))
                ncol += 1
        n_struct = ncol

        def expand(coeffs):
            row = [zero] * n_struct
            for k, v in coeffs.items():
                plus, minus = cols[k]
                row[plus] += num(v)
                if minus is not None:
                    row[minus] -= num(v)
            return row

        rows, rhs, kinds = [], [], []
        for coeffs, b in self.ub_rows:
            rows.append(expand(coeffs))
            rhs.append(num(b))
            kinds.append("ub")
        for coeffs, b in self.eq_rows:
            rows.append(expand(coeffs))
            rhs.append(num(b))
            kinds.append("eq")
        n_rows = len(rows)
        n_ub = len(self.ub_rows)

        # slack for every ub row; artificial where the slack cannot start basic
        total = n_struct + n_ub
        slack_col = {}
        for r in range(n_ub):
            slack_col[r] = n_struct + r
        art_rows = []
        signs = []
        for r in range(n_rows):
            sign = one
            if rhs[r] < 0:
                sign = -one
            signs.append(sign)
            if kinds[r] == "eq" or sign < 0:
                art_rows.append(r)
        art_col = {r: total + i for i, r in enumerate(art_rows)}
        width = total + len(art_rows)

        T = []
        basis = []
        for r in range(n_rows):
            full = rows[r] + [zero] * (width - n_struct)
            if kinds[r] == "ub":
                full[slack_col[r]] = one
            if signs[r] < 0:
                full = [-v for v in full]
            b = rhs[r] * signs[r]
            if r in art_col:
                full[art_col[r]] = one
                basis.append(art_col[r])
            else:
                basis.append(slack_col[r])
            T.append(full + [b])

        def pivot(pr, pc):
            prow = T[pr]
            pv = prow[pc]
            if pv != one:
                prow = [v / pv for v in prow]
                T[pr] = prow
            for r2 in range(n_rows):
                if r2 == pr:
                    continue
                f = T[r2][pc]
                if f != 0:
                    row2 = T[r2]
                    T[r2] = [a - f * b for a, b in zip(row2, prow)]
            basis[pr] = pc

        def run(cost, allowed):
            # cost: list over columns (maximize); reduced costs recomputed each iteration
            while True:
                cb = [cost[basis[r]] for r in range(n_rows)]
                enter = None
                for j in allowed:
                    if j in basis_set():
                        continue
                    red = cost[j] - sum(cb[r] * T[r][j] for r in range(n_rows) if T[r][j] != 0)
                    if red > tol:
                        enter = j
                        break
                if enter is None:
                    return "optimal"
                best = None
                for r in range(n_rows):
                    a = T[r][enter]
                    if a > tol:
                        ratio = T[r][-1] / a
                        key = (ratio, basis[r])
                        if best is None or key < best[0]:
                            best = (key, r)
                if best is None:
                    return "unbounded"
                pivot(best[1], enter)

        def basis_set():
            return set(basis)

        if art_rows:
            cost1 = [zero] * width
            for r in art_rows:
                cost1[art_col[r]] = -one
            run(cost1, range(width))
            infeas = sum((T[r][-1] for r in range(n_rows) if basis[r] in art_col.values()), zero)
            if infeas > (0 if self.exact else 1e-9):
                return LpResult("infeasible")
            # drive remaining (zero-level) artificials out of the basis
            art_set = set(art_col.values())
            for r in range(n_rows):
                if basis[r] in art_set:
                    for j in range(total):
                        if abs(T[r][j]) > tol and j not in basis:
                            pivot(r, j)
                            break
        cost2 = [zero] * width
        for k, v in self.c.items():
            plus, minus = cols[k]
            cost2[plus] += num(v)
            if minus is not None:
                cost2[minus] -= num(v)
        status = run(cost2, range(total))
        if status == "unbounded":
            return LpResult("unbounded")
        values = [zero] * width
        for r in range(n_rows):
            values[basis[r]] = T[r][-1]
        x = []
        for plus, minus in cols:
            v = values[plus] - (values[minus] if minus is not None else zero)
            x.append(v)
        objective = sum((num(v) * x[k] for k, v in self.c.items()), zero)
        # dual of ub row r: c_B B^{-1} e_r, read off the slack column's reduced cost
        cb = [cost2[basis[r]] for r in range(n_rows)]
        duals = []
        for r in range(n_ub):
            j = slack_col[r]
            y = sum((cb[i] * T[i][j] for i in range(n_rows)), zero) - cost2[j]
            duals.append(y * signs[r])
        return LpResult("optimal", x, objective, duals)
