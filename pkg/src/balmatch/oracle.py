"""Enumeration oracle for the expected outcome of uniform exact 1:1 matching.

Groups patients by covariate vector on its own (no use of the DBSeM code)
and, for every group present on both sides, averages the outcome sum over
all ``min(n, m)``-subsets of each side. Expectations add across groups
because the per-group selections are independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Sequence

from .cohort import GROUP_A, Cohort
from .dbsem import Cluster

DEFAULT_GUARD = 12


class GuardExceeded(ValueError):
    pass


@dataclass(frozen=True)
class ExactExpectation:
    e_a: Fraction | None
    e_b: Fraction | None
    enumerated_selections: int
    feasible: bool

    def to_dict(self) -> dict:
        def fmt(v):
            return None if v is None else f"{v.numerator}/{v.denominator}"

        return {
            "e_a": fmt(self.e_a),
            "e_b": fmt(self.e_b),
            "feasible": self.feasible,
            "enumerated_selections": self.enumerated_selections,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _subset_mean(outcomes: Sequence[Fraction], s: int, guard: int) -> tuple[Fraction, int]:
    if len(outcomes) > guard:
        raise GuardExceeded(f"group of size {len(outcomes)} exceeds guard {guard}")
    total = Fraction(0)
    count = 0
    for subset in combinations(outcomes, s):
        total += sum(subset, Fraction(0))
        count += 1
    return total / count, count


def per_cluster_expectation(
    a_cluster: Cluster, b_cluster: Cluster, guard: int = DEFAULT_GUARD
) -> tuple[Fraction, Fraction]:
    if a_cluster.assigned_cv != b_cluster.assigned_cv:
        raise ValueError("clusters are not matched: covariate vectors differ")
    s = min(a_cluster.size, b_cluster.size)
    e_a, _ = _subset_mean(a_cluster.outcomes, s, guard)
    e_b, _ = _subset_mean(b_cluster.outcomes, s, guard)
    return e_a, e_b


def enumerate_expectation(cohort: Cohort, guard: int = DEFAULT_GUARD) -> ExactExpectation:
    groups: dict[tuple[int, ...], tuple[list, list]] = {}
    for p in cohort.patients:
        groups.setdefault(p.covariates, ([], []))[0 if p.group == GROUP_A else 1].append(p.outcome)
    e_a = e_b = Fraction(0)
    selections = 0
    try:
        for cv in sorted(groups):
            a_out, b_out = groups[cv]
            if not a_out or not b_out:
                continue
            s = min(len(a_out), len(b_out))
            mean_a, n_a = _subset_mean(a_out, s, guard)
            mean_b, n_b = _subset_mean(b_out, s, guard)
            e_a += mean_a
            e_b += mean_b
            selections += n_a + n_b
    except GuardExceeded:
        return ExactExpectation(None, None, selections, False)
    return ExactExpectation(e_a, e_b, selections, True)
