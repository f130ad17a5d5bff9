from fractions import Fraction

import numpy as np
import pytest
from hypothesis import strategies as st

from noregret.core import ValueDistribution

QUARTERS = [Fraction(k, 4) for k in range(1, 5)]


@pytest.fixture
def quarters():
    """Uniform on {1/4, 1/2, 3/4, 1}, exact."""
    return ValueDistribution.uniform(QUARTERS)


@st.composite
def exact_distributions(draw, max_m=6, max_value=20):
    m = draw(st.integers(1, max_m))
    support = sorted(draw(st.sets(st.integers(1, max_value), min_size=m, max_size=m)))
    weights = draw(st.lists(st.integers(1, 9), min_size=m, max_size=m))
    total = sum(weights)
    return ValueDistribution(tuple(Fraction(v) for v in support),
                             tuple(Fraction(wt, total) for wt in weights))


def random_distribution(rng: np.random.Generator, m: int, exact: bool = False) -> ValueDistribution:
    support = np.sort(rng.choice(np.arange(1, 40), size=m, replace=False)).tolist()
    weights = rng.integers(1, 10, size=m).tolist()
    total = sum(weights)
    if exact:
        return ValueDistribution(tuple(Fraction(v) for v in support),
                                 tuple(Fraction(wt, total) for wt in weights))
    return ValueDistribution(tuple(float(v) for v in support), tuple(wt / total for wt in weights))
