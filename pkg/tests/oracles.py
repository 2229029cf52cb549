"""Slow reference implementations used only by the tests."""

from fractions import Fraction
from itertools import combinations


def pairwise_u(x, y):
    """U by direct pair counting: x above y scores 1, ties 1/2."""
    total = Fraction(0)
    for a in x:
        for b in y:
            total += 1 if a > b else Fraction(1, 2) if a == b else 0
    return total


def enumerated_mann_whitney(x, y):
    """Exact two-sided p by relabelling the pooled sample in every possible way."""
    pooled = list(x) + list(y)
    n1, n2 = len(x), len(y)
    centre = Fraction(n1 * n2, 2)
    observed = abs(pairwise_u(x, y) - centre)
    hits = total = 0
    for chosen in combinations(range(len(pooled)), n1):
        rest = [pooled[k] for k in range(len(pooled)) if k not in chosen]
        u = pairwise_u([pooled[k] for k in chosen], rest)
        total += 1
        hits += abs(u - centre) >= observed
    return float(pairwise_u(x, y)), hits / total
