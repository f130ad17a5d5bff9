from fractions import Fraction

import numpy as np
import pytest

from noregret.simplex import LinearProgram

F = Fraction


def test_textbook_problem_exact():
    # max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  -> (2, 6), value 36
    lp = LinearProgram(2, exact=True)
    lp.set_objective({0: 3, 1: 5})
    lp.add_le({0: 1}, 4)
    lp.add_le({1: 2}, 12)
    lp.add_le({0: 3, 1: 2}, 18)
    res = lp.solve()
    assert res.status == "optimal"
    assert res.x == [2, 6] and res.objective == 36
    assert all(isinstance(v, Fraction) for v in res.x)


def test_statuses():
    lp = LinearProgram(1, exact=True)
    lp.set_objective({0: 1})
    lp.add_ge({0: 1}, 2)
    lp.add_le({0: 1}, 1)
    assert lp.solve().status == "infeasible"
    lp = LinearProgram(1, exact=True)
    lp.set_objective({0: 1})
    assert lp.solve().status == "unbounded"


def test_free_variables_and_equalities():
    # max -u s.t. u >= x - 1/2, u >= 1/2 - x, x = 1/5 with u free
    lp = LinearProgram(2, exact=True)
    lp.set_objective({1: -1})
    lp.add_ge({1: 1, 0: -1}, F(-1, 2))
    lp.add_ge({1: 1, 0: 1}, F(1, 2))
    lp.add_eq({0: 1}, F(1, 5))
    res = lp.solve(free=[1])
    assert res.objective == F(-3, 10)


def test_duals_certify_optimality():
    lp = LinearProgram(2, exact=True)
    lp.set_objective({0: 3, 1: 5})
    rows = [({0: 1}, 4), ({1: 2}, 12), ({0: 3, 1: 2}, 18)]
    for c, b in rows:
        lp.add_le(c, b)
    res = lp.solve()
    y = res.duals_ub
    assert all(v >= 0 for v in y)
    assert sum(v * b for v, (_, b) in zip(y, rows)) == res.objective


def test_exact_simplex_matches_highs_on_random_programs():
    rng = np.random.default_rng(5)
    for _ in range(40):
        nv, nr = rng.integers(2, 6), rng.integers(2, 7)
        A = rng.integers(0, 6, size=(nr, nv))
        b = rng.integers(1, 20, size=nr)
        c = rng.integers(-3, 6, size=nv)
        exact = LinearProgram(int(nv), exact=True)
        flt = LinearProgram(int(nv))
        exact.set_objective({k: int(v) for k, v in enumerate(c)})
        flt.set_objective({k: float(v) for k, v in enumerate(c)})
        for row, rhs in zip(A, b):
            exact.add_le({k: int(v) for k, v in enumerate(row) if v}, int(rhs))
            flt.add_le({k: float(v) for k, v in enumerate(row) if v}, float(rhs))
        for k in range(nv):
            exact.add_le({k: 1}, 10)
            flt.add_le({k: 1}, 10.0)
        r1, r2 = exact.solve(), flt.solve()
        r3 = flt.solve(backend="simplex")
        assert r1.status == r2.status == r3.status == "optimal"
        assert float(r1.objective) == pytest.approx(r2.objective, abs=1e-9)
        assert r3.objective == pytest.approx(r2.objective, abs=1e-9)
