"""Deterministic balancing-score exact matching (DBSeM).

Patients of one group with identical covariate vectors form a cluster. A
cluster of group A is paired with the unique B cluster carrying the same
covariate vector, and every matched cluster is weighted by ``S / |C|`` with
``S = min(|C_A|, |C_B|)`` (min-weighting). The weighted outcome totals
``R_A`` and ``R_B`` are computed exactly with :class:`fractions.Fraction`.

Two clustering paths exist: ``"quadratic"`` follows the pairwise loop
literally and is kept as the reference; ``"indexed"`` hashes covariate
vectors and is the default. Both produce identical output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction
from typing import Callable, Sequence

from .cohort import GROUP_A, GROUP_B, Cohort, Patient, format_fixed, manhattan


@dataclass(frozen=True)
class Cluster:
    group: str
    assigned_cv: tuple[int, ...]
    member_ids: tuple[str, ...]
    outcomes: tuple[Fraction, ...]

    @property
    def size(self) -> int:
        return len(self.member_ids)

    @cached_property
    def outcome_sum(self) -> Fraction:
        if all(o.denominator == 1 for o in self.outcomes):
            return Fraction(sum(o.numerator for o in self.outcomes))
        return sum(self.outcomes, Fraction(0))


@dataclass(frozen=True)
class MatchedClusters:
    a: Cluster
    b: Cluster
    size: int
    w_a: Fraction
    w_b: Fraction


@dataclass(frozen=True)
class ClusterMatching:
    matched: tuple[MatchedClusters, ...]
    unmatched_a: tuple[Cluster, ...]
    unmatched_b: tuple[Cluster, ...]

    @property
    def k(self) -> int:
        return len(self.matched) + len(self.unmatched_a)

    @property
    def l(self) -> int:  # noqa: E743
        return len(self.matched) + len(self.unmatched_b)

    @property
    def pairs_total(self) -> int:
        return sum(m.size for m in self.matched)


@dataclass(frozen=True)
class WeightedResult:
    r_a: Fraction
    r_b: Fraction
    matched_pairs_total: int

    @property
    def rate_a(self) -> Fraction:
        return self.r_a / self.matched_pairs_total if self.matched_pairs_total else Fraction(0)

    @property
    def rate_b(self) -> Fraction:
        return self.r_b / self.matched_pairs_total if self.matched_pairs_total else Fraction(0)


@dataclass(frozen=True)
class DBSeMResult:
    matching: ClusterMatching
    result: WeightedResult


def _make_cluster(group: str, members: Sequence[Patient]) -> Cluster:
    members = sorted(members, key=lambda p: p.id)
    return Cluster(group, members[0].covariates, tuple(p.id for p in members), tuple(p.outcome for p in members))


def _cluster_quadratic(patients: Sequence[Patient]) -> list[list[Patient]]:
    clustered = [False] * len(patients)
    clusters: list[list[Patient]] = []
    for i, x in enumerate(patients):
        if not clustered[i]:
            clusters.append([x])
            clustered[i] = True
        current = clusters[-1]
        for j in range(i + 1, len(patients)):
            if not clustered[j] and manhattan(patients[j], current[0]) == 0:
                current.append(patients[j])
                clustered[j] = True
    return clusters


def _cluster_indexed(patients: Sequence[Patient]) -> list[list[Patient]]:
    index: dict[tuple[int, ...], list[Patient]] = {}
    for p in patients:
        index.setdefault(p.covariates, []).append(p)
    return list(index.values())


def cluster(cohort: Cohort, group: str, method: str = "indexed") -> list[Cluster]:
    """Partition one group into maximal equal-covariate clusters.

    Output is ordered lexicographically by covariate vector and members are
    ordered by id, so the result does not depend on the cohort's row order.
    """
    patients = cohort.group(group)
    if method == "indexed":
        groups = _cluster_indexed(patients)
    elif method == "quadratic":
        groups = _cluster_quadratic(patients)
    else:
        raise ValueError(f"unknown clustering method {method!r}")
    clusters = [_make_cluster(group, members) for members in groups]
    clusters.sort(key=lambda c: c.assigned_cv)
    return clusters


def _pair(a: Cluster, b: Cluster) -> MatchedClusters:
    s = min(a.size, b.size)
    return MatchedClusters(a, b, s, Fraction(s, a.size), Fraction(s, b.size))


def match_clusters(
    a_clusters: Sequence[Cluster], b_clusters: Sequence[Cluster], method: str = "indexed"
) -> ClusterMatching:
    """Pair clusters with identical covariate vectors and attach min-weights."""
    matched, unmatched_a = [], []
    if method == "indexed":
        by_cv = {c.assigned_cv: c for c in b_clusters}
        for a in a_clusters:
            b = by_cv.get(a.assigned_cv)
            if b is None:
                unmatched_a.append(a)
            else:
                matched.append(_pair(a, b))
    elif method == "quadratic":
        for a in a_clusters:
            for b in b_clusters:
                if sum(abs(x - y) for x, y in zip(a.assigned_cv, b.assigned_cv)) == 0:
                    matched.append(_pair(a, b))
                    break
            else:
                unmatched_a.append(a)
    else:
        raise ValueError(f"unknown matching method {method!r}")
    used = {m.b.assigned_cv for m in matched}
    unmatched_b = [b for b in b_clusters if b.assigned_cv not in used]
    return ClusterMatching(tuple(matched), tuple(unmatched_a), tuple(unmatched_b))


def min_weight(cm: ClusterMatching) -> WeightedResult:
    """Min-weighted outcome totals; unmatched clusters carry weight zero."""
    r_a = sum((m.w_a * m.a.outcome_sum for m in cm.matched), Fraction(0))
    r_b = sum((m.w_b * m.b.outcome_sum for m in cm.matched), Fraction(0))
    return WeightedResult(r_a, r_b, cm.pairs_total)


WeightingScheme = Callable[[ClusterMatching], WeightedResult]


def dbsem(cohort: Cohort, method: str = "indexed", weighting: WeightingScheme = min_weight) -> DBSeMResult:
    cm = match_clusters(cluster(cohort, GROUP_A, method), cluster(cohort, GROUP_B, method), method)
    return DBSeMResult(cm, weighting(cm))


@dataclass(frozen=True)
class UsageReport:
    member_fraction_a: Fraction
    member_fraction_b: Fraction
    pairs_fraction_a: Fraction
    pairs_fraction_b: Fraction


def usage_report(cm: ClusterMatching, cohort: Cohort) -> UsageReport:
    """Share of each group inside matched clusters, and matched pairs per group size."""
    a, b = cohort.a, cohort.b
    in_a = sum(m.a.size for m in cm.matched)
    in_b = sum(m.b.size for m in cm.matched)
    pairs = cm.pairs_total

    def frac(n, d):
        return Fraction(n, d) if d else Fraction(0)

    return UsageReport(frac(in_a, a), frac(in_b, b), frac(pairs, a), frac(pairs, b))


def rational(value: Fraction) -> dict:
    """Exact ``p/q`` string plus a fixed 10-digit decimal rendering."""
    if not isinstance(value, Fraction):
        value = Fraction(value)
    return {"exact": f"{value.numerator}/{value.denominator}", "decimal": f"{float(value):.10f}"}


def _cluster_dict(c: Cluster, precision: int, members: bool) -> dict:
    d = {
        "group": c.group,
        "cv": [format_fixed(v, precision) for v in c.assigned_cv],
        "size": c.size,
        "outcome_sum": rational(c.outcome_sum),
    }
    if members:
        d["member_ids"] = list(c.member_ids)
    return d


def report(cohort: Cohort, method: str = "indexed", members: bool = False) -> dict:
    """JSON-ready DBSeM report; depends only on the cohort's patient multiset."""
    res = dbsem(cohort, method)
    cm, wr = res.matching, res.result
    usage = usage_report(cm, cohort)
    p = cohort.precision
    every = [m.a for m in cm.matched] + list(cm.unmatched_a) + [m.b for m in cm.matched] + list(cm.unmatched_b)
    every.sort(key=lambda c: (c.group, c.assigned_cv))
    clusters = [_cluster_dict(c, p, members) for c in every]
    return {
        "clusters": clusters,
        "matches": [
            {
                "cv": [format_fixed(v, p) for v in m.a.assigned_cv],
                "size_a": m.a.size,
                "size_b": m.b.size,
                "S": m.size,
                "w_a": rational(m.w_a),
                "w_b": rational(m.w_b),
                "deaths_a": rational(m.a.outcome_sum),
                "deaths_b": rational(m.b.outcome_sum),
            }
            for m in cm.matched
        ],
        "k": cm.k,
        "l": cm.l,
        "a": cohort.a,
        "b": cohort.b,
        "matched_pairs_total": wr.matched_pairs_total,
        "r_a": rational(wr.r_a),
        "r_b": rational(wr.r_b),
        "rates": {"a": rational(wr.rate_a), "b": rational(wr.rate_b)},
        "usage": {
            "member_fraction_a": rational(usage.member_fraction_a),
            "member_fraction_b": rational(usage.member_fraction_b),
            "pairs_fraction_a": rational(usage.pairs_fraction_a),
            "pairs_fraction_b": rational(usage.pairs_fraction_b),
        },
    }


def report_json(cohort: Cohort, method: str = "indexed", members: bool = False) -> str:
    """Canonical compact serialization of :func:`report`, suitable for byte comparison."""
    return json.dumps(report(cohort, method, members), sort_keys=True, separators=(",", ":"))
