"""Hypothesis tests and rate summaries for matched outcomes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import special
from scipy.stats import t as student_t

from .cohort import Cohort
from .dbsem import WeightedResult
from .psm import Matching, matching_deaths


@dataclass(frozen=True)
class TestReport:
    test: str
    statistic: float
    p_value: float
    df: float
    inputs: dict = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {
            "test": self.test,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "df": self.df,
            "inputs": self.inputs,
            "flags": list(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def chi2_sf(statistic: float, df: float) -> float:
    """Upper tail of the chi-square distribution via the regularized incomplete gamma Q(df/2, x/2)."""
    if statistic <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, statistic / 2.0))


def chi_square_2x2(deaths_a: float, n_a: float, deaths_b: float, n_b: float) -> TestReport:
    """Pearson chi-square on the dead/alive by group table, no continuity correction.

    Counts may be fractional (weighted).
    """
    inputs = {"deaths_a": deaths_a, "n_a": n_a, "deaths_b": deaths_b, "n_b": n_b}
    if n_a <= 0 or n_b <= 0:
        raise ValueError("group sizes must be positive")
    if not (0 <= deaths_a <= n_a and 0 <= deaths_b <= n_b):
        raise ValueError("deaths must lie in [0, n]")
    table = np.array([[deaths_a, n_a - deaths_a], [deaths_b, n_b - deaths_b]], dtype=float)
    total = table.sum()
    cols = table.sum(axis=0)
    if np.any(cols == 0):
        return TestReport("chi_square", 0.0, 1.0, 1.0, inputs, ("degenerate",))
    expected = np.outer(table.sum(axis=1), cols) / total
    statistic = float(np.sum((table - expected) ** 2 / expected))
    return TestReport("chi_square", statistic, chi2_sf(statistic, 1.0), 1.0, inputs)


@dataclass(frozen=True)
class WeightedSample:
    values: tuple[float, ...]
    weights: tuple[float, ...]

    @classmethod
    def binary(cls, deaths: float, total: float) -> WeightedSample:
        """``deaths`` weighted ones and ``total - deaths`` weighted zeros."""
        return cls((1.0, 0.0), (float(deaths), float(total) - float(deaths)))

    @classmethod
    def unweighted(cls, values: Sequence[float]) -> WeightedSample:
        return cls(tuple(map(float, values)), (1.0,) * len(values))


def _moments(sample: WeightedSample, weights: str) -> tuple[float, float, float]:
    """(mean, unbiased variance, sample size) under frequency or reliability weights."""
    x = np.asarray(sample.values, dtype=float)
    w = np.asarray(sample.weights, dtype=float)
    sw = w.sum()
    if sw <= 0:
        raise ValueError("sample needs positive total weight")
    mean = float(np.sum(w * x) / sw)
    ss = float(np.sum(w * (x - mean) ** 2))
    if weights == "frequency":
        n = sw
    elif weights == "reliability":
        n = sw**2 / float(np.sum(w**2))
    else:
        raise ValueError(f"unknown weight kind {weights!r}")
    var = ss / sw * n / (n - 1) if n > 1 else 0.0
    return mean, var, n


def t_test_two_sample(
    sample_a: WeightedSample, sample_b: WeightedSample, weights: str = "frequency"
) -> TestReport:
    """Welch two-sample t-test on weighted observations, two-tailed.

    ``weights="frequency"`` reads weights as (possibly fractional) counts, so
    the sample size is the weight total. ``"reliability"`` uses Kish's
    effective size ``(sum w)**2 / sum w**2``.
    """
    ma, va, na = _moments(sample_a, weights)
    mb, vb, nb = _moments(sample_b, weights)
    inputs = {
        "a": {"values": list(sample_a.values), "weights": list(sample_a.weights)},
        "b": {"values": list(sample_b.values), "weights": list(sample_b.weights)},
        "weights": weights,
    }
    se2_a, se2_b = va / na, vb / nb
    se2 = se2_a + se2_b
    if se2 == 0:
        if ma == mb:
            return TestReport("t_test", 0.0, 1.0, math.nan, inputs, ("zero_variance",))
        return TestReport("t_test", math.copysign(math.inf, ma - mb), 0.0, math.nan, inputs, ("zero_variance",))
    statistic = (ma - mb) / math.sqrt(se2)
    denom = (se2_a**2 / (na - 1) if na > 1 else 0.0) + (se2_b**2 / (nb - 1) if nb > 1 else 0.0)
    df = se2**2 / denom if denom > 0 else math.inf
    p = float(2.0 * student_t.sf(abs(statistic), df))
    return TestReport("t_test", float(statistic), min(1.0, p), float(df), inputs)


@dataclass(frozen=True)
class RateSummary:
    deaths_a: Fraction
    deaths_b: Fraction
    pairs: int
    flags: tuple[str, ...] = ()

    @property
    def rate_a(self) -> Fraction:
        return self.deaths_a / self.pairs if self.pairs else Fraction(0)

    @property
    def rate_b(self) -> Fraction:
        return self.deaths_b / self.pairs if self.pairs else Fraction(0)


def rate_summary(m: Matching | WeightedResult, cohort: Cohort) -> RateSummary:
    """Death counts and rates per side for a matching or a min-weighted result."""
    if not cohort.binary_outcomes:
        raise ValueError("rate summary needs binary outcomes")
    if isinstance(m, WeightedResult):
        deaths_a, deaths_b, pairs = m.r_a, m.r_b, m.matched_pairs_total
    else:
        deaths_a, deaths_b = matching_deaths(m, cohort)
        pairs = len(m.pairs)
    flags = () if pairs else ("empty",)
    return RateSummary(Fraction(deaths_a), Fraction(deaths_b), pairs, flags)
