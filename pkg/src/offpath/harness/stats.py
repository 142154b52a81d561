"""Binomial and geometric helpers for comparing Monte Carlo runs with theory."""
from __future__ import annotations

import math

from scipy import stats


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    ci = stats.binomtest(successes, trials).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


def binomial_sigma(p: float, n: int) -> float:
    """Standard deviation of a success *rate* over ``n`` Bernoulli(p) trials."""
    return math.sqrt(p * (1 - p) / n)


def within_sigmas(observed: float, p: float, n: int, k: float = 3.0) -> bool:
    return abs(observed - p) <= k * binomial_sigma(p, n)


def geometric_cdf(p: float, rounds: int) -> float:
    """Chance of at least one success within ``rounds`` independent tries."""
    return 1.0 - (1.0 - p) ** rounds


def chi2_uniform(counts) -> float:
    """p-value of a chi-squared test that ``counts`` came from a uniform law."""
    return float(stats.chisquare(counts).pvalue)
