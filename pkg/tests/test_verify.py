from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noregret.auctions import reserve_schedule_from_lp
from noregret.core import ValueDistribution, quarters_distribution, border_satisfied
from noregret.engine import SimulationConfig, run
from noregret.learners import LearnerConfig
from noregret.lp import solve_reduced_uniform_lp
from noregret.verify import (
    border_extreme_point,
    closed_form_spa_xu,
    counterexample_instance,
    exact_xyu,
    nonconvexity_products,
    same_bid_alloc_bound,
    verify_bmsw_necessity,
    verify_counterexample,
    verify_nonconvexity,
    verify_uniform_suboptimality,
)

F = Fraction


def test_counterexample_sweep():
    for M in (1, 2, 10, F(7, 3), 100):
        for delta in (F(1, 100), F(1, 20), F(1, 10), F(1, 8)):
            rep = verify_counterexample(M, delta)
            assert rep.passed, rep.table()
            assert any("x4" in note for note in rep.notes)


def test_counterexample_domain():
    with pytest.raises(ValueError):
        counterexample_instance(10, F(1, 7))
    with pytest.raises(ValueError):
        counterexample_instance(0, F(1, 10))


def test_counterexample_x_is_wq():
    w, q, x = counterexample_instance(10, F(1, 10))
    assert w == [F(1, 10), F(2, 5), F(1, 2), F(1)]
    assert x == [F(1, 4), F(11, 20), F(13, 20), F(17, 20)]
    assert sum(q) == 1


def test_nonconvexity_report():
    rep = verify_nonconvexity()
    assert rep.passed, rep.table()
    assert rep.values["pulls_a"] == {"w1": F(3, 5), "w2": F(1, 5), "w3": F(1, 5)}
    assert rep.values["pulls_b"] == {"w1": F(3, 5), "w3": F(1, 5), "w4": F(1, 5)}
    assert rep.values["y_mid"] == [F(3, 10), F(1, 2), F(4, 5), F(9, 10), F(9, 10)]


def test_nonconvexity_products_frozen():
    # independent arithmetic: (w_i - w_j) y_j listed from arm i-1 down to arm 1
    w = [1, 3, 4, 7, 30]
    ya = [F(3, 10), F(7, 10), F(9, 10), F(9, 10)]
    yb = [F(3, 10), F(3, 10), F(7, 10), F(9, 10)]
    ym = [(a + b) / 2 for a, b in zip(ya, yb)]
    tables = nonconvexity_products()
    for name, y in (("a", ya), ("b", yb), ("mid", ym)):
        for i in (3, 4) if name == "mid" else (2, 3, 4):
            expect = [(w[i] - w[j]) * y[j] for j in reversed(range(i))]
            assert tables[f"{name}:w{i + 1}"] == expect
    assert tables["a:w5"] == [F(207, 10), F(117, 5), F(189, 10), F(87, 10)]
    assert float(tables["a:w5"][1]) == 23.4
    assert float(tables["mid:w5"][1]) == 20.8


def test_same_bid_bound():
    assert same_bid_alloc_bound(F(2, 5), 2) == F(4, 5)
    assert same_bid_alloc_bound(F(1, 5), 2) == F(9, 10)
    for n in range(1, 6):
        assert same_bid_alloc_bound(1, n) == F(1, n)
    with pytest.raises(ValueError):
        same_bid_alloc_bound(0, 2)


@given(st.fractions(min_value=F(1, 100), max_value=1), st.integers(1, 6))
@settings(max_examples=100)
def test_same_bid_bound_matches_tie_split(qS, n):
    # oracle: among k other buyers in S (binomial), the tied winner is uniform
    from math import comb
    expect = sum(comb(n - 1, k) * qS ** k * (1 - qS) ** (n - 1 - k) * F(1, k + 1)
                 for k in range(n))
    assert same_bid_alloc_bound(qS, n) == expect


def test_uniform_suboptimality():
    rep = verify_uniform_suboptimality()
    assert rep.passed, rep.table()
    assert rep.values["uniform_total"] == F(9, 16)
    assert rep.values["spa_total"] == F(37, 64)


def test_border_extreme_point():
    q = [F(1, 2), F(1, 2)]
    assert border_extreme_point(q, [F(1, 4), F(3, 4)], 2)
    # full-set constraint tight plus x1 = x2: a vertex
    assert border_extreme_point(q, [F(1, 2), F(1, 2)], 2)
    # only x1 = x2 binds
    assert not border_extreme_point(q, [F(1, 4), F(1, 4)], 2)
    assert not border_extreme_point(q, [F(1), F(1)], 2)


def test_report_json_and_table():
    rep = verify_counterexample(10, F(1, 10))
    doc = rep.to_json()
    assert doc["passed"] and doc["values"]["x"][0] == "1/4"
    assert rep.table().splitlines()[0] == "counterexample: PASS"
    with pytest.raises(ValueError):
        rep.check("bad", 1, "!=", 2)


def test_necessity_on_truthful_spa():
    d = quarters_distribution()
    cfg = SimulationConfig(dist=d, n=2, T=40, auction={"type": "spa_reserve"},
                           learners=LearnerConfig(type="truthful"), record_policy=True)
    tr = run(cfg)
    est = exact_xyu(tr)
    x, u = closed_form_spa_xu(d, 2)
    assert est["X"][0] == x and est["U"][1] == u
    assert all(s == 0 for s in est["slack"][0])
    rep = verify_bmsw_necessity(tr)
    assert rep.passed, rep.table()


def test_necessity_on_learning_uniform_schedule():
    d = quarters_distribution()
    T = 400
    sol = solve_reduced_uniform_lp(d, 2)
    schedule = [str(r) for r in reserve_schedule_from_lp(sol.x, d, 2, T)]
    cfg = SimulationConfig(dist=d, n=2, T=T,
                           auction={"type": "uniform_declining", "schedule": schedule},
                           learners=LearnerConfig(type="ftl", clever=True), seed=5,
                           record_policy=True)
    rep = verify_bmsw_necessity(run(cfg))
    assert rep.passed, rep.table()


def test_necessity_requires_policy():
    d = quarters_distribution()
    tr = run(SimulationConfig(dist=d, n=2, T=5, auction={"type": "spa_reserve"}))
    with pytest.raises(ValueError):
        exact_xyu(tr)
