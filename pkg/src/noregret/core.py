"""Value distributions and the closed-form single-item benchmarks.

Every function here is written against plain Python arithmetic so it works
unchanged on ``float`` and on ``fractions.Fraction``; pass a distribution built
from Fractions to get exact answers.
"""
from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from pathlib import Path
from typing import Sequence

import numpy as np

FLOAT_TOL = 1e-9
PROB_SUM_TOL = 1e-12

NUMERIC_ENV = "NOREGRET_NUMERIC"


def numeric_mode(default: str = "float") -> str:
    """Numeric mode from the environment, ``"float"`` or ``"rational"``."""
    mode = os.environ.get(NUMERIC_ENV, default).strip().lower()
    if mode not in ("float", "rational"):
        raise ValueError(f"{NUMERIC_ENV} must be 'float' or 'rational', got {mode!r}")
    return mode


def to_fraction(value) -> Fraction:
    """Exact conversion; strings such as ``"1/10"`` are accepted."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        # decimal literals like 0.25 or 0.1 are meant as written, not as binary floats
        return Fraction(repr(value))
    return Fraction(value)


def is_exact(*values) -> bool:
    return all(isinstance(v, (int, Fraction)) for v in values)


def leq(a, b, tol: float = FLOAT_TOL) -> bool:
    """``a <= b``, exact for rationals and with absolute slack for floats."""
    if is_exact(a, b):
        return a <= b
    return float(a) <= float(b) + tol


@dataclass(frozen=True)
class ValueDistribution:
    """Finite-support value distribution (w_1 < ... < w_m with probabilities q_j).

    Values are not restricted to [0, 1].
    """

    support: tuple
    probs: tuple

    def __post_init__(self):
        support = tuple(self.support)
        probs = tuple(self.probs)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        if len(support) == 0:
            raise ValueError("distribution needs at least one support point")
        if len(support) != len(probs):
            raise ValueError("support and probs have different lengths")
        for v in support:
            if not isinstance(v, Real) or v < 0:
                raise ValueError(f"support values must be nonnegative reals, got {v!r}")
        if any(b <= a for a, b in zip(support, support[1:])):
            raise ValueError("support must be strictly increasing")
        if any(not isinstance(p, Real) or p <= 0 for p in probs):
            raise ValueError("all probabilities must be positive")
        total = sum(probs)
        if is_exact(*probs):
            if total != 1:
                raise ValueError(f"probabilities sum to {total}, not 1")
        elif abs(float(total) - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {float(total)!r}, not 1")

    @property
    def m(self) -> int:
        return len(self.support)

    @property
    def exact(self) -> bool:
        return is_exact(*self.support, *self.probs)

    def cdf(self, j: int):
        """F(w_j) for a 1-based index j; ``cdf(0)`` is 0."""
        return sum(self.probs[:j], type(self.probs[0])(0))

    def tail(self, j: int):
        """Q_j = sum of q_l for l >= j (1-based)."""
        return sum(self.probs[j - 1:], type(self.probs[0])(0))

    def as_fractions(self) -> "ValueDistribution":
        return ValueDistribution(
            tuple(to_fraction(v) for v in self.support),
            tuple(to_fraction(p) for p in self.probs),
        )

    def as_floats(self) -> "ValueDistribution":
        return ValueDistribution(
            tuple(float(v) for v in self.support), tuple(float(p) for p in self.probs)
        )

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Support indices (0-based) drawn i.i.d."""
        return rng.choice(self.m, size=size, p=np.asarray(self.probs, dtype=float))

    def to_json(self) -> dict:
        return {"support": [_jsonable(v) for v in self.support],
                "probs": [_jsonable(p) for p in self.probs]}

    @classmethod
    def from_json(cls, doc: dict, exact: bool = False) -> "ValueDistribution":
        if not isinstance(doc, dict) or set(doc) != {"support", "probs"}:
            raise ValueError('distribution document must have exactly the keys "support" and "probs"')
        conv = to_fraction if exact else _number
        return cls(tuple(conv(v) for v in doc["support"]), tuple(conv(p) for p in doc["probs"]))

    @classmethod
    def load(cls, path, exact: bool = False) -> "ValueDistribution":
        return cls.from_json(json.loads(Path(path).read_text()), exact=exact)

    @classmethod
    def uniform(cls, support: Sequence, exact: bool = True) -> "ValueDistribution":
        m = len(support)
        if exact:
            return cls(tuple(to_fraction(v) for v in support), tuple(Fraction(1, m) for _ in support))
        return cls(tuple(float(v) for v in support), tuple(1.0 / m for _ in support))

    @classmethod
    def point_mass(cls, w) -> "ValueDistribution":
        one = Fraction(1) if is_exact(w) else 1.0
        return cls((w,), (one,))


def _number(v):
    if isinstance(v, str):
        return float(Fraction(v))
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def _jsonable(v):
    if isinstance(v, Fraction):
        return int(v) if v.denominator == 1 else str(v)
    return v


def quarters_distribution(exact: bool = True) -> ValueDistribution:
    """Uniform on {1/4, 1/2, 3/4, 1}; the running two-buyer example."""
    return ValueDistribution.uniform([Fraction(k, 4) for k in range(1, 5)], exact=exact)


def expected_max(dist: ValueDistribution, n: int):
    """Val_n: expected highest value among n i.i.d. draws."""
    _check_n(n)
    total = 0 * dist.support[0]
    prev = 0 * dist.probs[0]
    for j in range(1, dist.m + 1):
        cur = dist.cdf(j) ** n
        total += dist.support[j - 1] * (cur - prev)
        prev = cur
    return total


def x_vcg(dist: ValueDistribution, n: int, j: int):
    """Win probability of a truthful bid w_j in a second-price auction against
    n-1 i.i.d. truthful opponents, ties split uniformly.

    Uses the identity sum_k C(n-1,k) q^k F^(n-1-k) / (k+1) = (F_j^n - F_{j-1}^n) / (n q_j).
    """
    _check_n(n)
    _check_index(dist, j)
    q = dist.probs[j - 1]
    return (dist.cdf(j) ** n - dist.cdf(j - 1) ** n) / (n * q)


def x_vcg_vector(dist: ValueDistribution, n: int) -> list:
    return [x_vcg(dist, n, j) for j in range(1, dist.m + 1)]


def p_vcg(dist: ValueDistribution, n: int, j: int):
    """Interim second-price payment of a truthful bid w_j (ties split uniformly)."""
    _check_n(n)
    _check_index(dist, j)
    if n == 1:
        return 0 * dist.support[0]
    w, q = dist.support, dist.probs
    total = 0 * w[0]
    # strictly lower top opponent: win outright, pay that opponent's value
    for ell in range(1, j):
        total += w[ell - 1] * (dist.cdf(ell) ** (n - 1) - dist.cdf(ell - 1) ** (n - 1))
    # k >= 1 opponents tie at w_j: win with prob 1/(k+1), pay w_j
    below = dist.cdf(j - 1)
    tie_win = 0 * q[0]
    for k in range(1, n):
        tie_win += math.comb(n - 1, k) * q[j - 1] ** k * below ** (n - 1 - k) / (k + 1)
    return total + w[j - 1] * tie_win


def e_harmonic(dist: ValueDistribution, n: int, j: int):
    """E[1 / (1 + H)] with H ~ Binomial(n-1, Q_j): the share a bidder at the
    current reserve gets when tied with every opponent whose value is >= w_j."""
    _check_n(n)
    if j == dist.m + 1:
        raise ValueError("E_{m+1} is not defined; callers treat 1/E_{m+1} as 0")
    _check_index(dist, j)
    Q = dist.tail(j)
    total = 0 * Q
    for k in range(n):
        total += math.comb(n - 1, k) * Q ** k * (1 - Q) ** (n - 1 - k) / (1 + k)
    return total


def border_violations(pull_probs: Sequence, x: Sequence, n: int, tol: float = FLOAT_TOL) -> list:
    """Border checks over the upper level sets of x.

    For monotone x these are the support tails: n * sum_{l>=j} p_l x_l <= 1 - (1 - sum_{l>=j} p_l)^n.
    Returns (positions, lhs, rhs) for every violated set; empty means feasible.
    """
    if len(pull_probs) != len(x):
        raise ValueError("pull_probs and x must have the same length")
    _check_n(n)
    order = sorted(range(len(x)), key=lambda i: (-x[i], -i))
    bad = []
    mass = 0 * pull_probs[0]
    lhs_sum = 0 * pull_probs[0]
    for count, idx in enumerate(order, start=1):
        mass += pull_probs[idx]
        lhs_sum += pull_probs[idx] * x[idx]
        lhs = n * lhs_sum
        rhs = 1 - (1 - mass) ** n
        if not leq(lhs, rhs, tol):
            bad.append((sorted(order[:count]), lhs, rhs))
    return bad


def border_satisfied(pull_probs: Sequence, x: Sequence, n: int, tol: float = FLOAT_TOL) -> bool:
    """Whether x is the interim allocation of some symmetric single-item auction
    when each of n buyers independently submits type l with probability p_l."""
    return not border_violations(pull_probs, x, n, tol)


def border_tight_sets(pull_probs: Sequence, x: Sequence, n: int) -> list:
    """Tail indices j (1-based) where the tail Border constraint holds with equality (exact inputs)."""
    tight = []
    for j in range(1, len(x) + 1):
        mass = sum(pull_probs[j - 1:], 0 * pull_probs[0])
        lhs = n * sum((p * xv for p, xv in zip(pull_probs[j - 1:], x[j - 1:])), 0 * pull_probs[0])
        if lhs == 1 - (1 - mass) ** n:
            tight.append(j)
    return tight


BORDER_ORACLE_MAX_N = 3
BORDER_ORACLE_MAX_M = 4


def border_oracle(pull_probs: Sequence, x: Sequence, n: int) -> bool:
    """Independent Border check: search directly for an allocation rule.

    Decision variables are a_i(profile) for every ordered profile of pulled
    types; the program asks for sum_i a_i <= 1 per profile and interim
    allocation exactly x for every buyer. Solved with HiGHS.
    """
    from scipy.optimize import linprog

    m = len(x)
    if len(pull_probs) != m:
        raise ValueError("pull_probs and x must have the same length")
    if n > BORDER_ORACLE_MAX_N or m > BORDER_ORACLE_MAX_M:
        raise ValueError(
            f"border_oracle handles n <= {BORDER_ORACLE_MAX_N} and m <= {BORDER_ORACLE_MAX_M}")
    p = [float(v) for v in pull_probs]
    xs = [float(v) for v in x]
    if any(v < -FLOAT_TOL or v > 1 + FLOAT_TOL for v in xs):
        return False
    profiles = list(itertools.product(range(m), repeat=n))
    nvar = len(profiles) * n

    def var(pi, i):
        return pi * n + i

    a_ub = np.zeros((len(profiles), nvar))
    for pi in range(len(profiles)):
        a_ub[pi, var(pi, 0):var(pi, 0) + n] = 1.0
    b_ub = np.ones(len(profiles))
    rows, rhs = [], []
    for i in range(n):
        for j in range(m):
            if p[j] <= 0:
                continue
            row = np.zeros(nvar)
            for pi, prof in enumerate(profiles):
                if prof[i] != j:
                    continue
                weight = 1.0
                for k, t in enumerate(prof):
                    if k != i:
                        weight *= p[t]
                row[var(pi, i)] = weight
            rows.append(row)
            rhs.append(xs[j])
    res = linprog(np.zeros(nvar), A_ub=a_ub, b_ub=b_ub, A_eq=np.array(rows), b_eq=np.array(rhs),
                  bounds=[(0, 1)] * nvar, method="highs")
    return res.status == 0


def myerson_revenue(dist: ValueDistribution, n: int):
    """Optimal Bayesian incentive compatible, interim IR revenue for n i.i.d. buyers.

    Linear program over interim (x, p): IC between every pair of types, IR,
    monotone x and the Border tail constraints. Exact when dist is exact.
    """
    from .simplex import LinearProgram

    _check_n(n)
    m = dist.m
    w, q = dist.support, dist.probs
    zero = 0 * q[0]
    lp = LinearProgram(2 * m, exact=dist.exact)
    X = list(range(m))
    Pv = list(range(m, 2 * m))
    lp.set_objective({Pv[j]: n * q[j] for j in range(m)})
    for i in range(m):
        lp.add_le({X[i]: -w[i], Pv[i]: 1}, zero)  # IR
        for j in range(m):
            if i != j:
                # w_i x_j - p_j <= w_i x_i - p_i
                lp.add_le({X[j]: w[i], Pv[j]: -1, X[i]: -w[i], Pv[i]: 1}, zero)
    for j in range(m - 1):
        lp.add_le({X[j]: 1, X[j + 1]: -1}, zero)
    _add_border_tails(lp, X, dist, n)
    res = lp.solve(free=Pv)
    if res.status != "optimal":
        raise RuntimeError(f"revenue program ended with status {res.status}")
    return res.objective


def _add_border_tails(lp, X, dist: ValueDistribution, n: int):
    for j in range(1, dist.m + 1):
        Q = dist.tail(j)
        coeffs = {X[l - 1]: n * dist.probs[l - 1] for l in range(j, dist.m + 1)}
        lp.add_le(coeffs, 1 - (1 - Q) ** n)


def _check_n(n: int):
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"buyer count must be a positive integer, got {n!r}")


def _check_index(dist: ValueDistribution, j: int):
    if not 1 <= j <= dist.m:
        raise ValueError(f"support index {j} outside 1..{dist.m}")
