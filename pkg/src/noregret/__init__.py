"""Repeated single-item auctions against no-regret learning buyers."""
from .core import (
    ValueDistribution,
    border_oracle,
    border_satisfied,
    e_harmonic,
    expected_max,
    myerson_revenue,
    p_vcg,
    x_vcg,
)

__all__ = [
    "ValueDistribution",
    "border_oracle",
    "border_satisfied",
    "e_harmonic",
    "expected_max",
    "myerson_revenue",
    "p_vcg",
    "x_vcg",
]
