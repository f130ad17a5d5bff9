"""Revenue linear programs for clever mean-based buyers, and their Lagrangian.

All three programs share the objective sum_i q_i (w_i x_i - u_i) (revenue per
buyer) and the no-regret rows u_i >= (w_i - w_j) x_j for j < i, u_i >= 0, with
x monotone. They differ only in how x is kept feasible:

* ``solve_single_lp``: 0 <= x <= 1 (one buyer);
* ``solve_border_lp``: Border's tail constraints for n buyers;
* ``solve_reduced_uniform_lp``: the declining-reserve schedule budget
  sum_j x_j (1/E_j - 1/E_{j+1}) <= 1 of pay-your-bid uniform auctions.

Exact distributions give exact answers (rational simplex); float
distributions go to HiGHS.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import (FLOAT_TOL, ValueDistribution, _add_border_tails, _check_n, e_harmonic,
                   is_exact, leq)
from .simplex import LinearProgram

SLPREV_MAX_M = 5000


@dataclass
class LagrangianMultipliers:
    """Lower-triangular lambda[k][i] (k >= i), 0-based, rows summing to 1.

    Rows are stored sparsely as {column: weight}; ``matrix()`` gives the dense form.
    """

    rows: list

    def __post_init__(self):
        for k, row in enumerate(self.rows):
            if any(i > k or i < 0 for i in row):
                raise ValueError(f"row {k} has entries above the diagonal")
            if any(v < 0 for v in row.values()):
                raise ValueError(f"row {k} has a negative multiplier")
            total = sum(row.values())
            if not (total == 1 if is_exact(total) else abs(float(total) - 1.0) <= 1e-7):
                raise ValueError(f"row {k} sums to {total}, expected 1")

    @classmethod
    def from_matrix(cls, matrix) -> "LagrangianMultipliers":
        return cls([{i: v for i, v in enumerate(row[:k + 1]) if v != 0}
                    for k, row in enumerate(matrix)])

    @classmethod
    def diagonal(cls, m: int, exact: bool = True) -> "LagrangianMultipliers":
        one = Fraction(1) if exact else 1.0
        return cls([{k: one} for k in range(m)])

    @property
    def m(self) -> int:
        return len(self.rows)

    def __getitem__(self, key):
        k, i = key
        return self.rows[k].get(i, 0)

    def matrix(self) -> list:
        zero = 0
        return [[self.rows[k].get(i, zero) for i in range(self.m)] for k in range(self.m)]

    def to_json(self) -> list:
        return [[_jsonable(v) for v in row] for row in self.matrix()]


@dataclass
class LpSolution:
    x: list
    u: list
    objective: object  # per buyer
    status: str
    n: int = 1
    dual: LagrangianMultipliers | None = None

    @property
    def total_revenue(self):
        return self.n * self.objective

    def to_json(self) -> dict:
        doc = {
            "x": [float(v) for v in self.x],
            "u": [float(v) for v in self.u],
            "objective": float(self.objective),
            "total_revenue": float(self.total_revenue),
            "n": self.n,
            "status": self.status,
            "dual": self.dual.to_json() if self.dual is not None else None,
        }
        if is_exact(self.objective):
            doc["exact"] = {
                "x": [str(v) for v in self.x],
                "u": [str(v) for v in self.u],
                "objective": str(self.objective),
                "total_revenue": str(self.total_revenue),
            }
        return doc


def _jsonable(v):
    if isinstance(v, Fraction):
        return float(v)
    return float(v)


# ---------------------------------------------------------------------------
# the three programs


def _bmsw_program(dist: ValueDistribution, feasibility: str, n: int = 1) -> LpSolution:
    m = dist.m
    w, q = dist.support, dist.probs
    exact = dist.exact
    zero = Fraction(0) if exact else 0.0
    X = list(range(m))
    U = list(range(m, 2 * m))
    lp = LinearProgram(2 * m, exact=exact)
    lp.set_objective({**{X[i]: q[i] * w[i] for i in range(m)}, **{U[i]: -q[i] for i in range(m)}})
    # u is declared free so that every lower bound on u_i carries a multiplier;
    # their duals divided by q_i are the lambda_{ij} of the Lagrangian.
    rows = {}
    for i in range(m):
        for j in range(i):
            rows[(i, j)] = len(lp.ub_rows)
            lp.add_ge({U[i]: 1, X[j]: -(w[i] - w[j])}, zero)
        rows[(i, i)] = len(lp.ub_rows)
        lp.add_ge({U[i]: 1}, zero)
    for j in range(m - 1):
        lp.add_le({X[j]: 1, X[j + 1]: -1}, zero)
    if feasibility == "box":
        lp.add_le({X[m - 1]: 1}, 1 + zero)
    elif feasibility == "border":
        _add_border_tails(lp, X, dist, n)
    elif feasibility == "uniform":
        inv = [1 / e_harmonic(dist, n, j) for j in range(1, m + 1)] + [zero]
        lp.add_le({X[j]: inv[j] - inv[j + 1] for j in range(m)}, 1 + zero)
    else:
        raise ValueError(f"unknown feasibility model {feasibility!r}")
    res = lp.solve(free=U)
    if res.status != "optimal":
        raise RuntimeError(f"{feasibility} revenue program ended with status {res.status}")
    x = [_clean(v, exact) for v in res.x[:m]]
    u = [_clean(v, exact) for v in res.x[m:]]
    dual = _multipliers_from_duals(res.duals_ub, rows, q, m, exact)
    return LpSolution(x=x, u=u, objective=res.objective, status=res.status, n=n, dual=dual)


def _clean(v, exact):
    if exact:
        return v
    v = float(v)
    return 0.0 if abs(v) < 1e-12 else v


def _multipliers_from_duals(duals, rows, q, m, exact):
    out = []
    for i in range(m):
        row = {}
        for j in range(i + 1):
            y = duals[rows[(i, j)]]
            if not exact:
                y = max(float(y), 0.0)
            lam = y / q[i]
            if lam != 0:
                row[j] = lam
        out.append(row)
    if not exact:
        # HiGHS duals are accurate to solver tolerance; renormalize rows
        out = [{j: v / sum(r.values()) for j, v in r.items()} if r else {i: 1.0}
               for i, r in enumerate(out)]
    try:
        return LagrangianMultipliers(out)
    except ValueError:
        return None


def solve_single_lp(dist: ValueDistribution) -> LpSolution:
    """Best revenue from one clever mean-based buyer (the BMSW program)."""
    return _bmsw_program(dist, "box")


def solve_border_lp(dist: ValueDistribution, n: int) -> LpSolution:
    """Reduced n-buyer BMSW program: x must satisfy Border's constraints.

    The objective is per buyer; ``total_revenue`` multiplies by n.
    """
    _check_n(n)
    return _bmsw_program(dist, "border", n)


def solve_reduced_uniform_lp(dist: ValueDistribution, n: int) -> LpSolution:
    """Best pay-your-bid uniform auction with a declining reserve, as an LP in x.

    Per-buyer objective; the total over n buyers is ``total_revenue``.
    """
    _check_n(n)
    return _bmsw_program(dist, "uniform", n)


def tight_utilities(dist: ValueDistribution, x) -> list:
    """u_i = max(0, max_{j<i} (w_i - w_j) x_j): the least utilities the no-regret rows allow."""
    w = dist.support
    zero = 0 * x[0]
    return [max([zero] + [(w[i] - w[j]) * x[j] for j in range(i)]) for i in range(len(x))]


def bmsw_revenue(dist: ValueDistribution, x, u=None):
    """Per-buyer objective sum_i q_i (w_i x_i - u_i), with tight u by default."""
    if u is None:
        u = tight_utilities(dist, x)
    return sum(q * (w * xi - ui) for q, w, xi, ui in zip(dist.probs, dist.support, x, u))


# ---------------------------------------------------------------------------
# Lagrangian machinery


def phi(dist: ValueDistribution, lam: LagrangianMultipliers, i: int):
    """Virtual value of index i (1-based):
    v_i - sum_{k>=i} (q_k / q_i) (v_k - v_i) lambda_{ki}."""
    if not 1 <= i <= dist.m:
        raise ValueError(f"index {i} outside 1..{dist.m}")
    v, q = dist.support, dist.probs
    c = i - 1
    total = v[c]
    for k in range(c, dist.m):
        lk = lam.rows[k].get(c)
        if lk:
            total -= q[k] / q[c] * (v[k] - v[c]) * lk
    return total


def phi_vector(dist: ValueDistribution, lam: LagrangianMultipliers) -> list:
    v, q = dist.support, dist.probs
    out = list(v)
    for k, row in enumerate(lam.rows):
        for c, lk in row.items():
            if c != k and lk:
                out[c] -= q[k] / q[c] * (v[k] - v[c]) * lk
    return out


def fill_low_to_high(dist: ValueDistribution) -> LagrangianMultipliers:
    """For k = 1..m, pour the unit budget of row k onto the lowest index whose
    virtual value is still positive, stopping each pour when that value hits 0;
    whatever is left when the pour reaches index k stays on the diagonal."""
    v, q = dist.support, dist.probs
    m = dist.m
    exact = dist.exact
    tol = 0 if exact else FLOAT_TOL
    one = Fraction(1) if exact else 1.0
    cur = list(v)  # running virtual values
    rows = []
    low = 0  # every index below `low` already has virtual value 0
    for k in range(m):
        budget = one
        row = {}
        while budget > 0:
            while low < k and cur[low] <= tol:
                low += 1
            i = low
            if i >= k:
                row[k] = row.get(k, 0) + budget
                break
            rate = q[k] / q[i] * (v[k] - v[i])  # drop in phi_i per unit of lambda_{ki}
            fill = cur[i] / rate
            amount = fill if fill < budget else budget
            row[i] = amount
            cur[i] -= rate * amount
            if amount == fill:
                cur[i] = 0 * cur[i]
            budget -= amount
        rows.append(row)
    return LagrangianMultipliers(rows)


def lowered_values(dist: ValueDistribution, lam: LagrangianMultipliers, k: int) -> list:
    """Support values w_i (i < k, 1-based k) whose virtual value row k lowers."""
    row = lam.rows[k - 1]
    return [dist.support[i] for i in sorted(row) if i != k - 1 and row[i] > 0]


def lowering_boundary(dist: ValueDistribution, lam: LagrangianMultipliers, k: int | None = None):
    """Lowest support value lowered by row k (default: the top value).

    For the equal-revenue distribution under fill_low_to_high this tracks
    v / (ln v + 1); returns None when row k keeps its whole budget.
    """
    k = dist.m if k is None else k
    vals = lowered_values(dist, lam, k)
    return vals[0] if vals else None


def lagrangian_value(dist: ValueDistribution, lam: LagrangianMultipliers, n: int = 1):
    """max over feasible monotone x of sum_i q_i phi_i x_i.

    n = 1 uses the box [0,1]^m (the best threshold vector); n > 1 uses Border's
    constraints and is solved as a small LP.
    """
    _check_n(n)
    ph = phi_vector(dist, lam)
    weights = [q * p for q, p in zip(dist.probs, ph)]
    zero = 0 * weights[0]
    if n == 1:
        best, tail = zero, zero
        for wgt in reversed(weights):
            tail += wgt
            best = max(best, tail)
        return best
    m = dist.m
    lp = LinearProgram(m, exact=dist.exact)
    lp.set_objective({j: weights[j] for j in range(m)})
    for j in range(m - 1):
        lp.add_le({j: 1, j + 1: -1}, zero)
    _add_border_tails(lp, list(range(m)), dist, n)
    res = lp.solve()
    if res.status != "optimal":
        raise RuntimeError(f"Lagrangian inner program ended with status {res.status}")
    return res.objective


@dataclass
class LambdaReport:
    property1: bool  # phi_i >= 0 for all i
    property2: bool  # no i < j < k < l with lambda_li > 0 and lambda_kj > 0
    property3: bool  # lambda_ki = 0 whenever some j < i has q_j phi_j > 0
    phi_monotone: bool
    phi: list
    witnesses: dict = field(default_factory=dict)  # 1-based index tuples

    @property
    def all_hold(self) -> bool:
        return self.property1 and self.property2 and self.property3


def check_lambda_properties(dist: ValueDistribution, lam: LagrangianMultipliers,
                            tol: float = FLOAT_TOL) -> LambdaReport:
    """Evaluate the three structural properties literally, plus phi monotonicity."""
    if lam.m != dist.m:
        raise ValueError("lambda size does not match the distribution")
    exact = dist.exact and all(is_exact(*r.values()) for r in lam.rows if r)
    eps = 0 if exact else tol
    ph = phi_vector(dist, lam)
    m = dist.m
    witnesses = {}

    neg = [i for i in range(m) if ph[i] < -eps]
    if neg:
        witnesses["property1"] = (neg[0] + 1,)

    # property 2: a pair (k, j) with lambda_kj > 0, j < k, and a later row l > k
    # whose lowest positive column i is below j
    positive = [sorted(c for c, val in r.items() if val > eps) for r in lam.rows]
    lowest = [p[0] if p else math.inf for p in positive]
    suffix = [(math.inf, -1)] * (m + 1)
    for l in range(m - 1, -1, -1):
        suffix[l] = min(suffix[l + 1], (lowest[l], l))
    for k in range(m):
        best_i, l = suffix[k + 1]
        for j in positive[k]:
            if j < k and best_i < j:
                witnesses["property2"] = (int(best_i) + 1, j + 1, k + 1, l + 1)
                break
        if "property2" in witnesses:
            break

    first = next((j for j in range(m) if dist.probs[j] * ph[j] > eps), None)
    if first is not None:
        for k in range(m):
            bad = [i for i in positive[k] if i > first]
            if bad:
                witnesses["property3"] = (k + 1, bad[0] + 1, first + 1)
                break

    mono = next((i for i in range(m - 1) if ph[i] > ph[i + 1] + eps), None)
    if mono is not None:
        witnesses["phi_monotone"] = (mono + 1, mono + 2)
    return LambdaReport(
        property1="property1" not in witnesses,
        property2="property2" not in witnesses,
        property3="property3" not in witnesses,
        phi_monotone=mono is None,
        phi=ph,
        witnesses=witnesses,
    )


def regularity_check(dist: ValueDistribution) -> bool:
    """Discrete form of f(v)/F(v) <= 1/(H - v):
    F(w_j)/F(w_i) >= (H - w_i)/(H - w_j) for every j < i, with H = w_m."""
    if dist.m < 2:
        raise ValueError("regularity_check needs at least two support points")
    w = dist.support
    H = w[-1]
    for i in range(1, dist.m):
        for j in range(i):
            # cross-multiplied; every factor is positive
            if not leq((H - w[i]) * dist.cdf(i + 1), dist.cdf(j + 1) * (H - w[j])):
                return False
    return True


# ---------------------------------------------------------------------------
# truncated equal-revenue distribution


def equal_revenue_distribution(H, step=None, points: int | None = None) -> ValueDistribution:
    """Equal-revenue curve on [1, H] discretized so that Pr[V >= v] = 1/v at
    every grid point (the remaining 1/H is the atom at H).

    ``step`` gives the arithmetic grid {1, 1+step, ..., H}; ``points`` a
    geometric grid with that many points. Exactly one must be given.
    """
    if (step is None) == (points is None):
        raise ValueError("give exactly one of step or points")
    if not H > 1:
        raise ValueError("H must exceed 1")
    if step is not None:
        if not step > 0:
            raise ValueError("grid step must be positive")
        m = int(math.floor((H - 1) / step + 1e-9)) + 1
        if m > SLPREV_MAX_M:
            raise ValueError(f"grid has {m} points, above the cap of {SLPREV_MAX_M}")
        grid = [1 + k * step for k in range(m)]
        if grid[-1] < H - 1e-12:
            grid.append(H)
            m += 1
        if m > SLPREV_MAX_M:
            raise ValueError(f"grid has {m} points, above the cap of {SLPREV_MAX_M}")
    else:
        if points < 2:
            raise ValueError("a geometric grid needs at least two points")
        if points > SLPREV_MAX_M:
            raise ValueError(f"grid has {points} points, above the cap of {SLPREV_MAX_M}")
        grid = list(np.geomspace(1.0, float(H), points))
        grid[0], grid[-1] = 1.0, float(H)
    exact = is_exact(H, *(grid if step is not None else [])) and step is not None
    tail = [1 / g for g in grid] + [0 * grid[0]]
    probs = [tail[k] - tail[k + 1] for k in range(len(grid))]
    if not exact:
        grid = [float(g) for g in grid]
        probs = [float(p) for p in probs]
        probs[-1] = 1.0 - sum(probs[:-1])
    return ValueDistribution(tuple(grid), tuple(probs))


def slprev_equal_revenue(H, step=None, points: int | None = 2000) -> float:
    """Single-buyer program value on the discretized truncated equal-revenue curve."""
    if step is not None:
        points = None
    dist = equal_revenue_distribution(H, step=step, points=points)
    if dist.m <= 60:
        return float(solve_single_lp(dist.as_floats()).objective)
    return _single_lp_cutting_plane(dist)


def _single_lp_cutting_plane(dist: ValueDistribution, max_rounds: int = 200) -> float:
    """The single-buyer program for large m by row generation.

    Starts from the adjacent rows u_i >= (w_i - w_{i-1}) x_{i-1} plus the rows
    that fill_low_to_high's multipliers mark as active (complementary
    slackness); each round adds, for every i, the most violated row over j < i
    and re-solves. The answer is certified by the final round finding no
    violated row, so the seed only affects speed.
    """
    from scipy.optimize import linprog
    from scipy.sparse import coo_matrix

    w = np.asarray(dist.support, dtype=float)
    q = np.asarray(dist.probs, dtype=float)
    m = len(w)
    c = np.concatenate([-q * w, q])  # minimize the negated revenue
    pairs = {(i, i - 1) for i in range(1, m)}
    for k, row in enumerate(fill_low_to_high(dist).rows):
        pairs.update((k, i) for i, lam in row.items() if i < k and lam > 0)
    bounds = [(0, 1)] * m + [(0, None)] * m

    def constraints():
        r, cidx, vals = [], [], []
        row = 0
        for i, j in sorted(pairs):
            r += [row, row]
            cidx += [j, m + i]
            vals += [w[i] - w[j], -1.0]
            row += 1
        for j in range(m - 1):  # x_j - x_{j+1} <= 0
            r += [row, row]
            cidx += [j, j + 1]
            vals += [1.0, -1.0]
            row += 1
        return coo_matrix((vals, (r, cidx)), shape=(row, 2 * m)).tocsr(), np.zeros(row)

    for _ in range(max_rounds):
        A, b = constraints()
        res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        if res.status != 0:
            raise RuntimeError(f"HiGHS failed: {res.message}")
        x, u = res.x[:m], res.x[m:]
        # gain[i, j] = (w_i - w_j) x_j for j < i
        gain = (w[:, None] - w[None, :]) * x[None, :]
        gain[np.triu_indices(m)] = -np.inf
        j_star = gain.argmax(axis=1)
        viol = gain[np.arange(m), j_star] - u
        new = [(i, int(j_star[i])) for i in np.nonzero(viol > 1e-10)[0]]
        new = [p for p in new if p not in pairs]
        if not new:
            return float(-res.fun)
        pairs.update(new)
    raise RuntimeError("row generation did not converge")
