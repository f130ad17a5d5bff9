"""Exact re-checks of the instance-specific counterexamples and bounds.

Every comparison runs on ``fractions.Fraction``; a report lists each
inequality with both sides and whether it holds with the stated strictness.
"""
from __future__ import annotations

import itertools
import operator
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .auctions import build_mechanism
from .core import ValueDistribution, border_satisfied, border_violations, p_vcg, to_fraction, x_vcg
from .lp import solve_reduced_uniform_lp, tight_utilities

RELATIONS = {
    ">": operator.gt,
    ">=": operator.ge,
    "=": operator.eq,
    "<=": operator.le,
    "<": operator.lt,
}


@dataclass
class Check:
    description: str
    left: object
    relation: str
    right: object
    holds: bool

    def to_json(self) -> dict:
        return {
            "description": self.description,
            "left": _render(self.left),
            "relation": self.relation,
            "right": _render(self.right),
            "holds": self.holds,
        }


@dataclass
class VerificationReport:
    claim: str
    checks: list = field(default_factory=list)
    values: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.holds for c in self.checks)

    def check(self, description: str, left, relation: str, right) -> bool:
        if relation not in RELATIONS:
            raise ValueError(f"unknown relation {relation!r}")
        holds = bool(RELATIONS[relation](left, right))
        self.checks.append(Check(description, left, relation, right, holds))
        return holds

    def flag(self, description: str, holds: bool):
        """A boolean fact (e.g. a feasibility test) recorded as ``holds == True``."""
        self.checks.append(Check(description, bool(holds), "=", True, bool(holds)))

    def to_json(self) -> dict:
        return {
            "claim": self.claim,
            "passed": self.passed,
            "checks": [c.to_json() for c in self.checks],
            "values": {k: _render(v) for k, v in self.values.items()},
            "notes": list(self.notes),
        }

    def table(self) -> str:
        rows = [(c.description, _render(c.left), c.relation, _render(c.right),
                 "ok" if c.holds else "FAIL") for c in self.checks]
        widths = [max([len(str(r[k])) for r in rows] + [1]) for k in range(5)]
        lines = [f"{self.claim}: {'PASS' if self.passed else 'FAIL'}"]
        for r in rows:
            lines.append("  " + "  ".join(str(v).ljust(wd) for v, wd in zip(r, widths)))
        for note in self.notes:
            lines.append(f"  note: {note}")
        return "\n".join(lines)


def _render(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, (list, tuple)):
        return [_render(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _render(x) for k, x in v.items()}
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return v


# ---------------------------------------------------------------------------
# shared helpers


def _rank(rows: list) -> int:
    """Rank of a rational matrix by Gaussian elimination."""
    mat = [list(r) for r in rows]
    rank = 0
    cols = len(mat[0]) if mat else 0
    for c in range(cols):
        pivot = next((r for r in range(rank, len(mat)) if mat[r][c] != 0), None)
        if pivot is None:
            continue
        mat[rank], mat[pivot] = mat[pivot], mat[rank]
        for r in range(len(mat)):
            if r != rank and mat[r][c] != 0:
                f = mat[r][c] / mat[rank][c]
                mat[r] = [a - f * b for a, b in zip(mat[r], mat[rank])]
        rank += 1
    return rank


def border_extreme_point(pull_probs, x, n: int) -> bool:
    """x is a vertex of {x : Border for n buyers, 0 <= x <= 1, x monotone}.

    Collects every constraint that holds with equality at x (Border over all
    subsets, box bounds, monotonicity) and asks whether they pin x down,
    i.e. have rank m.
    """
    m = len(x)
    if not border_satisfied(pull_probs, x, n):
        return False
    tight = []
    for size in range(1, m + 1):
        for S in itertools.combinations(range(m), size):
            mass = sum(pull_probs[i] for i in S)
            lhs = n * sum(pull_probs[i] * x[i] for i in S)
            if lhs == 1 - (1 - mass) ** n:
                tight.append([n * pull_probs[i] if i in S else 0 for i in range(m)])
    for i in range(m):
        unit = [1 if k == i else 0 for k in range(m)]
        if x[i] == 0 or x[i] == 1:
            tight.append(unit)
    for i in range(m - 1):
        if x[i] == x[i + 1]:
            tight.append([1 if k == i else -1 if k == i + 1 else 0 for k in range(m)])
    return bool(tight) and _rank(tight) == m


def same_bid_alloc_bound(qS, n: int):
    """Largest win probability of a value in S when every value in S must
    submit the same bid: (1 - (1 - q(S))^n) / (n q(S))."""
    qS = to_fraction(qS)
    if not 0 < qS <= 1:
        raise ValueError("qS must lie in (0, 1]")
    if n < 1:
        raise ValueError("n must be a positive integer")
    return (1 - (1 - qS) ** n) / (n * qS)


# ---------------------------------------------------------------------------
# Border extreme point that no repeated auction can match


def counterexample_instance(M, delta):
    M, delta = to_fraction(M), to_fraction(delta)
    if not 0 < delta < Fraction(1, 7):
        raise ValueError("delta must lie in (0, 1/7)")
    if not M > 0:
        raise ValueError("M must be positive")
    w = [Fraction(k) / M for k in (1, 4, 5, 10)]
    q = [5 * delta, delta, delta, 1 - 7 * delta]
    half = Fraction(1, 2)
    W = [[half if c == r else (1 if c < r else 0) for c in range(4)] for r in range(4)]
    x = [sum(W[r][c] * q[c] for c in range(4)) for r in range(4)]
    return w, q, x


def verify_counterexample(M, delta) -> VerificationReport:
    """(x*, u*) meets the reduced two-buyer no-regret program yet cannot be
    matched by any repeated auction; x* = Wq, u* the tight utilities."""
    w, q, x = counterexample_instance(M, delta)
    delta = to_fraction(delta)
    dist = ValueDistribution(tuple(w), tuple(q))
    u = tight_utilities(dist, x)
    rep = VerificationReport("counterexample")
    rep.values.update({"w": w, "q": q, "x": x, "u": u})
    rep.check("x1 = 5 delta / 2", x[0], "=", 5 * delta / 2)
    rep.check("x2 = 11 delta / 2", x[1], "=", 11 * delta / 2)
    rep.check("x3 = 13 delta / 2", x[2], "=", 13 * delta / 2)
    rep.check("x4 = 1/2 + 7 delta / 2 (from Wq)", x[3], "=", Fraction(1, 2) + 7 * delta / 2)
    if x[3] != 1 - 7 * delta / 2:
        rep.notes.append(
            f"Wq gives x4 = {x[3]}, not the listed 1 - 7 delta/2 = {1 - 7 * delta / 2};"
            " the three decisive inequalities use x1..x3 only")
    rep.check("x1 (w3 - w1) > x2 (w3 - w2)", x[0] * (w[2] - w[0]), ">", x[1] * (w[2] - w[1]))
    rep.check("x2 (w4 - w2) > x1 (w4 - w1)", x[1] * (w[3] - w[1]), ">", x[0] * (w[3] - w[0]))
    rep.check("x2 (w4 - w2) > x3 (w4 - w3)", x[1] * (w[3] - w[1]), ">", x[2] * (w[3] - w[2]))
    rep.check("u1", u[0], "=", 0)
    for i in range(4):
        for j in range(i):
            rep.check(f"u{i + 1} >= (w{i + 1} - w{j + 1}) x{j + 1}", u[i], ">=", (w[i] - w[j]) * x[j])
    for j in range(3):
        rep.check(f"x{j + 1} <= x{j + 2}", x[j], "<=", x[j + 1])
    rep.flag("x* satisfies Border's constraints for 2 buyers", border_satisfied(q, x, 2))
    rep.flag("x* is an extreme point (tight constraints have rank 4)", border_extreme_point(q, x, 2))
    return rep


# ---------------------------------------------------------------------------
# the feasible set over a support-valued bid space is not convex

NONCONVEX_W = [1, 3, 4, 7, 30]


def _favourite(w, y, i):
    """Best arm (1-based) for value index i (0-based) when arm j pays its label:
    the strict argmax of (w_i - w_j) y_j over j < i; value w_1 takes arm 1."""
    if i == 0:
        return 1, [Fraction(0)]
    gains = [(w[i] - w[j]) * y[j] for j in range(i)]
    best = max(gains)
    if gains.count(best) != 1:
        return None, gains
    return gains.index(best) + 1, gains


def _pull_distribution(favourites, q):
    """Arms pulled (sorted, 1-based) and their probabilities."""
    mass = {}
    for i, arm in enumerate(favourites):
        mass[arm] = mass.get(arm, 0) + q[i]
    arms = sorted(mass)
    return arms, [mass[a] for a in arms]


def verify_nonconvexity() -> VerificationReport:
    w = [Fraction(v) for v in NONCONVEX_W]
    q = [Fraction(1, 5)] * 5
    t = Fraction(1, 10)
    ya = [3 * t, 7 * t, 9 * t, 9 * t, 9 * t]
    yb = [3 * t, 3 * t, 7 * t, 9 * t, 9 * t]
    x_target = [3 * t, 3 * t, 3 * t, 7 * t, 9 * t]
    rep = VerificationReport("nonconvexity")
    tables = {}
    for name, y, favs_expected in (("a", ya, [1, 1, 1, 2, 3]), ("b", yb, [1, 1, 1, 3, 4])):
        favs = []
        for i in range(5):
            arm, gains = _favourite(w, y, i)
            favs.append(arm)
            if i >= 2:
                tables[f"{name}:w{i + 1}"] = list(reversed(gains))  # listed from arm i-1 down to arm 1
        for i in range(2, 5):
            rep.check(f"auction {name}: favourite arm of w{i + 1}", favs[i], "=", favs_expected[i])
        x = [y[f - 1] for f in favs]
        for i in range(5):
            rep.check(f"auction {name}: x{i + 1} = y at the favourite arm", x[i], "=", x_target[i])
        arms, probs = _pull_distribution(favs, q)
        xs = [y[a - 1] for a in arms]
        rep.values[f"pulls_{name}"] = {f"w{a}": p for a, p in zip(arms, probs)}
        rep.flag(f"auction {name}: pulled arms {arms} with probabilities {[str(p) for p in probs]}"
                 f" and allocations {[str(v) for v in xs]} satisfy Border",
                 border_satisfied(probs, xs, 2))
    # the pull distribution for auction b as written out in the source text:
    # two arms, low with mass 4/5 at 3/10 and high with mass 1/5 at 9/10
    literal_probs = [Fraction(4, 5), Fraction(1, 5)]
    literal_x = [3 * t, 9 * t]
    rep.flag("auction b (two-arm reading): pulls [4/5, 1/5] with allocations [3/10, 9/10]"
             " satisfy Border", border_satisfied(literal_probs, literal_x, 2))
    y = [(a + b) / 2 for a, b in zip(ya, yb)]
    rep.values["y_mid"] = y
    rep.values["x_mid"] = x_target
    for i in (4, 3):
        arm, gains = _favourite(w, y, i)
        tables[f"mid:w{i + 1}"] = list(reversed(gains))
        rep.check(f"midpoint: w{i + 1} strictly prefers arm w3", arm if arm is not None else 0, "=", 3)
        for j in range(i):
            if j != 2:
                rep.check(f"midpoint: (w{i + 1} - w3) y3 > (w{i + 1} - w{j + 1}) y{j + 1}",
                          gains[2], ">", gains[j])
    rep.values["products"] = tables
    bound_two = same_bid_alloc_bound(Fraction(2, 5), 2)
    bound_one = same_bid_alloc_bound(Fraction(1, 5), 2)
    rep.values["bound_S_w4_w5"] = bound_two
    rep.values["bound_S_w5"] = bound_one
    rep.check("ceiling for arm w3 shared by {w4, w5}", bound_two, "=", Fraction(4, 5))
    rep.check("ceiling for an arm used by w5 alone", bound_one, "=", Fraction(9, 10))
    rep.check("x5 must hit its ceiling in every round", x_target[4], "=", bound_one)
    rep.check("contradiction: required x5 exceeds the shared-arm ceiling", x_target[4], ">", bound_two)
    return rep


def nonconvexity_products() -> dict:
    """The displayed product tables (w_i - w_j) y_j, keyed by auction and value."""
    return verify_nonconvexity().values["products"]


# ---------------------------------------------------------------------------
# pay-your-bid uniform auctions are not optimal


def verify_uniform_suboptimality() -> VerificationReport:
    w = [Fraction(k, 4) for k in range(1, 5)]
    reserve = Fraction(3, 4)
    dist = ValueDistribution(tuple(w), (Fraction(1, 4),) * 4)
    rep = VerificationReport("uniform-subopt")
    uniform_total = Fraction(0)
    spa_total = Fraction(0)
    for v1, v2 in itertools.product(w, repeat=2):
        weight = Fraction(1, 16)
        above = [v for v in (v1, v2) if v >= reserve]
        # zero-regret buyers above the reserve bid exactly the reserve in the
        # uniform auction; every entrant pays its bid
        uni = reserve if above else Fraction(0)
        if len(above) == 2:
            spa = max(min(above), reserve)
        elif len(above) == 1:
            spa = reserve
        else:
            spa = Fraction(0)
        rep.check(f"values ({v1}, {v2}): second price revenue >= uniform revenue", spa, ">=", uni)
        uniform_total += weight * uni
        spa_total += weight * spa
    rep.check("both values 1: second price revenue", max(w[3], reserve), "=", 1)
    rep.check("both values 1: uniform revenue", reserve, "=", Fraction(3, 4))
    sol = solve_reduced_uniform_lp(dist, 2)
    rep.values.update({"uniform_total": uniform_total, "spa_total": spa_total,
                       "lp_x": sol.x, "lp_total": sol.total_revenue})
    rep.check("optimal uniform total revenue (enumeration)", uniform_total, "=", Fraction(9, 16))
    rep.check("optimal uniform total revenue (program)", sol.total_revenue, "=", uniform_total)
    rep.check("second price with reserve 3/4 total revenue", spa_total, "=", Fraction(37, 64))
    rep.check("second price strictly beats the best uniform auction", spa_total, ">", uniform_total)
    return rep


# ---------------------------------------------------------------------------
# necessity of the reduced constraints, checked on a simulated trace


def exact_xyu(trace) -> dict:
    """Exact per-buyer (X, U, best fixed arm payoff) from a trace with recorded policies.

    For every round the buyer's recorded policy at value w_j is scored against
    the other buyers' recorded policies, averaged over their value draws.
    Averages run over all T rounds, so X[i][j] is the allocation the round
    policies give value w_j, whatever value the buyer actually drew.
    """
    if trace.policy is None:
        raise ValueError("trace was recorded without record_policy")
    cfg = trace.config
    dist = ValueDistribution.from_json(cfg["dist"], exact=True)
    n, T = cfg["n"], cfg["T"]
    m = dist.m
    mech = build_mechanism(cfg["auction"], dist, n, T)
    K = mech.K
    w, q = dist.support, dist.probs
    zero = Fraction(0)
    X = [[zero] * m for _ in range(n)]
    U = [[zero] * m for _ in range(n)]
    H = [[[zero] * K for _ in range(m)] for _ in range(n)]
    cache = {}
    for t in range(T):
        ctx = mech.context(t)
        pol = trace.policy[t]
        key = (mech.context_key(ctx), pol.tobytes())
        hit = cache.get(key)
        if hit is None:
            hit = _round_expectations(mech, ctx, _exact_policies(pol), w, q)
            cache[key] = hit
        x_t, u_t, h_t = hit
        for i in range(n):
            for j in range(m):
                X[i][j] += x_t[i][j]
                U[i][j] += u_t[i][j]
                row = H[i][j]
                for b in range(K):
                    row[b] += h_t[i][j][b]
    if T:
        X = [[v / T for v in r] for r in X]
        U = [[v / T for v in r] for r in U]
        best = [[max(H[i][j]) / T for j in range(m)] for i in range(n)]
    else:
        best = [[zero] * m for _ in range(n)]
    slack = [[best[i][j] - U[i][j] for j in range(m)] for i in range(n)]
    return {"X": X, "U": U, "best": best, "slack": slack}


def _exact_policies(pol):
    out = []
    for buyer in pol:
        rows = []
        for row in buyer:
            fr = [Fraction(float(v)) for v in row]
            s = sum(fr)
            rows.append([v / s for v in fr])
        out.append(rows)
    return out


def _round_expectations(mech, ctx, pols, w, q):
    n = len(pols)
    m = len(w)
    K = mech.K
    mixes = []
    for pk in pols:
        mix = [sum(q[v] * pk[v][b] for v in range(m)) for b in range(K)]
        mixes.append([(b, p) for b, p in enumerate(mix) if p != 0])
    x_t, u_t, h_t = [], [], []
    for i in range(n):
        alloc = [Fraction(0)] * K
        spend = [Fraction(0)] * K
        others = [mixes[k] for k in range(n) if k != i]
        for combo in itertools.product(*others):
            weight = Fraction(1)
            arms = []
            for b, p in combo:
                weight *= p
                arms.append(b)
            for b in range(K):
                full = arms[:i] + [b] + arms[i:]
                a, pay = mech.profile(ctx, full)[i]
                alloc[b] += weight * a
                spend[b] += weight * a * pay
        h = [[w[j] * alloc[b] - spend[b] for b in range(K)] for j in range(m)]
        x_t.append([sum(pols[i][j][b] * alloc[b] for b in range(K)) for j in range(m)])
        u_t.append([sum(pols[i][j][b] * h[j][b] for b in range(K)) for j in range(m)])
        h_t.append(h)
    return x_t, u_t, h_t


def verify_bmsw_necessity(trace) -> VerificationReport:
    """The trace's exact (X, U) satisfy every reduced n-buyer constraint, with
    each u_i relaxed by that value's regret (best fixed arm minus U)."""
    cfg = trace.config
    dist = ValueDistribution.from_json(cfg["dist"], exact=True)
    if [float(v) for v in dist.support] != [float(v) for v in trace.labels[1:]]:
        raise ValueError("necessity check needs the bid space to equal the support")
    n = cfg["n"]
    w, q = dist.support, dist.probs
    m = dist.m
    est = exact_xyu(trace)
    X, U, slack = est["X"], est["U"], est["slack"]
    rep = VerificationReport("bmsw-necessity")
    rep.values.update({"X": X, "U": U, "slack": slack})
    for b in range(n):
        for i in range(m):
            rep.check(f"buyer {b}: u{i + 1} + regret >= 0", U[b][i] + slack[b][i], ">=", 0)
            for j in range(i):
                rep.check(f"buyer {b}: u{i + 1} + regret >= (w{i + 1} - w{j + 1}) x{j + 1}",
                          U[b][i] + slack[b][i], ">=", (w[i] - w[j]) * X[b][j])
        for j in range(m - 1):
            rep.check(f"buyer {b}: x{j + 1} <= x{j + 2}", X[b][j], "<=", X[b][j + 1])
    mean_x = [sum(X[b][j] for b in range(n)) / n for j in range(m)]
    rep.values["x_mean"] = mean_x
    bad = border_violations(list(q), mean_x, n, tol=0)
    rep.flag(f"buyer-averaged x satisfies Border for {n} buyers", not bad)
    return rep


def closed_form_spa_xu(dist: ValueDistribution, n: int):
    """(x_vcg, interim utility) of truthful bidding in a reserve-free second-price auction."""
    x = [x_vcg(dist, n, j) for j in range(1, dist.m + 1)]
    u = [w * xj - p_vcg(dist, n, j) for j, (w, xj) in enumerate(zip(dist.support, x), start=1)]
    return x, u
