import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noregret import lp as L
from noregret.core import ValueDistribution, border_satisfied, e_harmonic
from noregret.verify import border_extreme_point, counterexample_instance

from conftest import QUARTERS, exact_distributions, random_distribution

F = Fraction
STEEP = ValueDistribution.uniform([1, 9, 10, 15])


# --- oracle: enumerate vertices of the single-buyer polytope in (x, u) --------


def vertex_oracle(dist):
    """max sum q (w x - u) over the vertices of {u_i >= (w_i - w_j) x_j, u >= 0,
    x >= 0, x monotone, x_m <= 1}, by solving every square subsystem."""
    m = dist.m
    w = [float(v) for v in dist.support]
    q = [float(v) for v in dist.probs]
    rows, rhs = [], []  # a . z >= b with z = (x, u)

    def row(coeffs, b=0.0):
        r = np.zeros(2 * m)
        for k, v in coeffs.items():
            r[k] = v
        rows.append(r)
        rhs.append(b)

    for i in range(m):
        for j in range(i):
            row({m + i: 1.0, j: -(w[i] - w[j])})
        row({m + i: 1.0})
        row({i: 1.0})
    for i in range(m - 1):
        row({i + 1: 1.0, i: -1.0})
    row({m - 1: -1.0}, -1.0)
    A, b = np.array(rows), np.array(rhs)
    c = np.array([q[i] * w[i] for i in range(m)] + [-q[i] for i in range(m)])
    best = -math.inf
    for subset in itertools.combinations(range(len(rows)), 2 * m):
        sub = A[list(subset)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        z = np.linalg.solve(sub, b[list(subset)])
        if (A @ z >= b - 1e-9).all():
            best = max(best, float(c @ z))
    return best


def test_single_lp_point_mass():
    sol = L.solve_single_lp(ValueDistribution.point_mass(F(3, 2)))
    assert (sol.objective, sol.x, sol.u, sol.status) == (F(3, 2), [1], [0], "optimal")


def test_single_lp_quarters_vertex_enumeration(quarters):
    oracle = vertex_oracle(quarters)
    sol = L.solve_single_lp(quarters)
    assert float(sol.objective) == pytest.approx(oracle, abs=1e-12)
    # frozen from the enumeration above; beats the best posted price 3/8
    assert sol.objective == F(13, 32)
    assert sol.x == [0, F(1, 2), 1, 1]


def test_single_lp_random_vertex_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(25):
        d = random_distribution(rng, int(rng.integers(1, 4)), exact=True)
        assert float(L.solve_single_lp(d).objective) == pytest.approx(vertex_oracle(d), abs=1e-9)


def test_border_lp_one_buyer_is_single_lp():
    rng = np.random.default_rng(4)
    for _ in range(10):
        d = random_distribution(rng, int(rng.integers(1, 6)), exact=True)
        assert L.solve_border_lp(d, 1).objective == L.solve_single_lp(d).objective


@given(exact_distributions(max_m=5), st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_border_dominates_uniform(dist, n):
    border = L.solve_border_lp(dist, n)
    uniform = L.solve_reduced_uniform_lp(dist, n)
    assert border.objective >= uniform.objective


@given(exact_distributions(max_m=5), st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_solutions_are_monotone_with_tight_utilities(dist, n):
    for sol in (L.solve_single_lp(dist), L.solve_border_lp(dist, n), L.solve_reduced_uniform_lp(dist, n)):
        assert all(a <= b for a, b in zip(sol.x, sol.x[1:]))
        assert all(v >= 0 for v in sol.u)
        assert sol.u == L.tight_utilities(dist, sol.x)
        assert sol.objective == L.bmsw_revenue(dist, sol.x, sol.u)


def test_border_lp_counterexample_instance():
    w, q, _ = counterexample_instance(10, F(1, 10))
    dist = ValueDistribution(tuple(w), tuple(q))
    sol = L.solve_border_lp(dist, 2)
    assert border_satisfied(q, sol.x, 2, tol=0)
    assert border_extreme_point(q, sol.x, 2)
    for i in range(4):
        assert sol.u[i] >= 0
        for j in range(i):
            assert sol.u[i] >= (w[i] - w[j]) * sol.x[j]


def test_border_lp_beats_uniform_on_quarters(quarters):
    border = L.solve_border_lp(quarters, 2)
    uniform = L.solve_reduced_uniform_lp(quarters, 2)
    assert uniform.objective == F(9, 32) and uniform.total_revenue == F(9, 16)
    assert uniform.x == [0, 0, F(3, 4), F(3, 4)]
    assert border.objective > uniform.objective


def test_reduced_uniform_small_cases():
    single = ValueDistribution((F(3),), (F(1),))
    sol = L.solve_reduced_uniform_lp(single, 2)
    assert sol.x == [e_harmonic(single, 2, 1)] == [F(1, 2)]
    assert sol.objective == F(3, 2)
    assert L.bmsw_revenue(ValueDistribution.uniform(QUARTERS), [0] * 4) == 0


def test_float_mode_matches_exact(quarters):
    fl = L.solve_border_lp(quarters.as_floats(), 2)
    ex = L.solve_border_lp(quarters, 2)
    assert fl.objective == pytest.approx(float(ex.objective), abs=1e-9)
    assert fl.to_json()["objective"] == pytest.approx(float(ex.objective))
    assert ex.to_json()["exact"]["objective"] == str(ex.objective)


# --- multipliers ------------------------------------------------------------------


def test_multiplier_validation():
    with pytest.raises(ValueError):
        L.LagrangianMultipliers([{0: F(1, 2)}])
    with pytest.raises(ValueError):
        L.LagrangianMultipliers([{1: F(1)}, {1: F(1)}])
    with pytest.raises(ValueError):
        L.LagrangianMultipliers([{0: F(1)}, {0: F(2), 1: F(-1)}])
    lam = L.LagrangianMultipliers.diagonal(3, exact=True)
    assert lam[2, 2] == 1 and lam[2, 0] == 0
    assert L.LagrangianMultipliers.from_matrix(lam.matrix()).rows == lam.rows


def test_phi_examples():
    lam = L.LagrangianMultipliers.diagonal(4, exact=True)
    assert L.phi_vector(STEEP, lam) == list(STEEP.support)
    one = L.LagrangianMultipliers([{0: F(1)}, {0: F(1, 8), 1: F(7, 8)}, {2: F(1)}, {3: F(1)}])
    assert L.phi(STEEP, one, 1) == 1 - F(9 - 1, 8) == 0
    full = L.LagrangianMultipliers([{0: F(1)}, {1: F(1)}, {2: F(1)}, {0: F(1)}])
    q = STEEP.probs
    assert L.phi(STEEP, full, 1) == 1 - q[3] / q[0] * (15 - 1)


def test_fill_low_to_high_examples():
    assert L.fill_low_to_high(ValueDistribution.point_mass(F(4))).rows == [{0: 1}]
    lam = L.fill_low_to_high(STEEP)
    assert lam[0, 0] == 1
    assert lam[1, 0] == F(1, 8) and lam[1, 1] == F(7, 8)
    assert lam[2, 1] == 1 and lam[3, 1] == 1
    rep = L.check_lambda_properties(STEEP, lam)
    assert rep.all_hold and rep.phi_monotone


def test_strong_duality_on_random_instances():
    rng = np.random.default_rng(2024)
    for k in range(200):
        d = random_distribution(rng, int(rng.integers(1, 7)), exact=(k % 4 == 0))
        lam = L.fill_low_to_high(d)
        rep = L.check_lambda_properties(d, lam)
        assert rep.all_hold and rep.phi_monotone
        assert float(L.lagrangian_value(d, lam)) == pytest.approx(
            float(L.solve_single_lp(d).objective), abs=1e-9)


@given(exact_distributions(max_m=6))
@settings(max_examples=60, deadline=None)
def test_fill_duality_is_exact(dist):
    lam = L.fill_low_to_high(dist)
    assert L.lagrangian_value(dist, lam) == L.solve_single_lp(dist).objective


def test_perturbing_fill_breaks_a_property():
    rng = np.random.default_rng(8)
    tried = 0
    while tried < 150:
        d = random_distribution(rng, int(rng.integers(2, 7)), exact=True)
        rows = [dict(r) for r in L.fill_low_to_high(d).rows]
        k = int(rng.integers(1, d.m))
        src = [c for c, v in rows[k].items() if v > 0]
        a = src[int(rng.integers(len(src)))]
        b = int(rng.integers(0, k + 1))
        if a == b:
            continue
        t = min(rows[k][a], F(1, int(rng.integers(2, 1000))))
        rows[k][a] -= t
        rows[k][b] = rows[k].get(b, 0) + t
        rows[k] = {c: v for c, v in rows[k].items() if v}
        assert not L.check_lambda_properties(d, L.LagrangianMultipliers(rows)).all_hold
        tried += 1


def test_property_predicates_literal():
    diag = L.check_lambda_properties(STEEP, L.LagrangianMultipliers.diagonal(4, exact=True))
    assert diag.property1 and diag.property2
    # q_1 phi_1 = 1/4 > 0 while rows 2..4 keep mass on their diagonals above index 1
    assert not diag.property3 and diag.witnesses["property3"] == (2, 2, 1)
    crafted = L.LagrangianMultipliers([{0: F(1)}, {1: F(1)}, {1: F(1, 2), 2: F(1, 2)},
                                      {0: F(1, 2), 3: F(1, 2)}])
    rep = L.check_lambda_properties(STEEP, crafted)
    assert not rep.property2 and rep.witnesses["property2"] == (1, 2, 3, 4)


def test_multi_buyer_steep_lagrangian():
    lam = L.fill_low_to_high(STEEP)
    # with two buyers the fill multipliers no longer certify the Border optimum
    assert L.lagrangian_value(STEEP, lam, n=2) >= L.solve_border_lp(STEEP, 2).objective


# --- regularity ------------------------------------------------------------------


def literal_regularity(dist):
    w = dist.support
    H = w[-1]
    cdf = [dist.cdf(j) for j in range(1, dist.m + 1)]
    return all(cdf[j] * (H - w[j]) >= (H - w[i]) * cdf[i]
               for i in range(dist.m) for j in range(i))


def test_regularity_examples():
    crafted = ValueDistribution((F(1), F(2), F(3)), (F(1, 20), F(1, 20), F(9, 10)))
    assert literal_regularity(crafted) and L.regularity_check(crafted)
    assert not literal_regularity(STEEP) and not L.regularity_check(STEEP)
    two = ValueDistribution((F(1), F(2)), (F(1, 2), F(1, 2)))
    assert L.regularity_check(two) == literal_regularity(two) == True
    with pytest.raises(ValueError):
        L.regularity_check(ValueDistribution.point_mass(F(1)))


@given(exact_distributions(max_m=5))
@settings(max_examples=50, deadline=None)
def test_regularity_matches_literal_predicate(dist):
    if dist.m >= 2:
        assert L.regularity_check(dist) == literal_regularity(dist)


# --- equal-revenue curve ------------------------------------------------------------


def test_equal_revenue_grid():
    d = L.equal_revenue_distribution(F(4), step=F(1, 2))
    assert d.support == tuple(F(2 + k, 2) for k in range(7))
    for j, v in enumerate(d.support, start=1):
        assert d.tail(j) == 1 / v
    assert d.probs[-1] == F(1, 4)
    g = L.equal_revenue_distribution(100, points=50)
    assert g.m == 50 and g.support[0] == 1.0 and g.support[-1] == 100.0
    with pytest.raises(ValueError):
        L.equal_revenue_distribution(10)
    with pytest.raises(ValueError):
        L.equal_revenue_distribution(10, step=1, points=5)
    with pytest.raises(ValueError):
        L.equal_revenue_distribution(10 ** 4, step=F(1, 1000))


def test_slprev_small_and_monotone():
    assert L.slprev_equal_revenue(2, step=F(1, 4)) >= 1
    vals = [L.slprev_equal_revenue(H) for H in (10 ** 2, 10 ** 3, 10 ** 4)]
    assert vals[0] < vals[1] < vals[2]


def test_slprev_cutting_plane_matches_dense_lp():
    d = L.equal_revenue_distribution(50, points=120)
    dense = float(L.solve_single_lp(d).objective)
    assert L._single_lp_cutting_plane(d) == pytest.approx(dense, abs=1e-8)
    assert float(L.lagrangian_value(d, L.fill_low_to_high(d))) == pytest.approx(dense, abs=1e-8)


def test_lowering_boundary_tracks_g():
    H = 10 ** 4
    d = L.equal_revenue_distribution(H, points=2000)
    lam = L.fill_low_to_high(d)
    assert L.lowering_boundary(d, lam) == pytest.approx(H / (math.log(H) + 1), rel=0.01)
    checked = 0
    for k in range(200, d.m - 1, 97):
        v = d.support[k]
        low = L.lowering_boundary(d, lam, k + 1)
        if low is not None:
            assert low == pytest.approx(v / (math.log(v) + 1), rel=0.01)
            checked += 1
    assert checked >= 10
    assert L.lowering_boundary(STEEP, L.LagrangianMultipliers.diagonal(4, exact=True)) is None
