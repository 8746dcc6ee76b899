from fractions import Fraction

import numpy as np
from hypothesis import given, settings, strategies as st

from balmatch.cohort import GROUP_A, GROUP_B, Cohort, permute
from balmatch.dbsem import cluster, dbsem, min_weight, report, report_json, usage_report
from balmatch.psm import greedy_exact_psm
from balmatch.synth import random_cohort

from conftest import cohort_of


def test_single_cluster_per_side(two_vs_three):
    a = cluster(two_vs_three, GROUP_A)
    b = cluster(two_vs_three, GROUP_B)
    assert [c.member_ids for c in a] == [("a1", "a2")]
    assert [c.member_ids for c in b] == [("b1", "b2", "b3")]


def test_distinct_vectors_are_singletons():
    c = cohort_of([("a1", "A", [0, 1], 0), ("a2", "A", [1, 0], 0), ("a3", "A", [1, 1], 1), ("b1", "B", [0, 0], 0)])
    assert [cl.size for cl in cluster(c, GROUP_A)] == [1, 1, 1]


def test_two_vs_three_weights(two_vs_three):
    res = dbsem(two_vs_three)
    (m,) = res.matching.matched
    assert m.size == 2
    assert (m.w_a, m.w_b) == (1, Fraction(2, 3))
    assert (res.result.r_a, res.result.r_b) == (1, Fraction(2, 3))
    assert res.result.matched_pairs_total == 2
    assert res.result.rate_b == Fraction(1, 3)


def test_no_overlap():
    c = cohort_of([("a1", "A", [0], 1), ("b1", "B", [1], 1)])
    res = dbsem(c)
    assert res.matching.matched == ()
    assert (res.matching.k, res.matching.l) == (1, 1)
    assert (res.result.r_a, res.result.r_b, res.result.matched_pairs_total) == (0, 0, 0)
    assert res.result.rate_a == 0


def test_b_copy_of_a_keeps_every_patient():
    rows = [("a1", "A", [0], 1), ("a2", "A", [0], 0), ("a3", "A", [2], 1)]
    c = cohort_of(rows + [("b" + pid[1:], "B", cv, o) for pid, _, cv, o in rows])
    res = dbsem(c)
    assert all(m.w_a == m.w_b == 1 for m in res.matching.matched)
    assert res.result.r_a == res.result.r_b == 2
    u = usage_report(res.matching, c)
    assert u.member_fraction_a == u.member_fraction_b == 1


def test_usage_views():
    c = cohort_of(
        [
            ("a1", "A", [0], 0),
            ("a2", "A", [0], 0),
            ("a3", "A", [5], 0),
            ("b1", "B", [0], 0),
            ("b2", "B", [0], 0),
            ("b3", "B", [0], 0),
        ]
    )
    u = usage_report(dbsem(c).matching, c)
    assert u.member_fraction_a == Fraction(2, 3)
    assert u.member_fraction_b == 1
    assert u.pairs_fraction_a == Fraction(2, 3)
    assert u.pairs_fraction_b == Fraction(2, 3)


def test_clusters_in_canonical_order_under_shuffle():
    c = random_cohort(5)
    rng = np.random.default_rng(0)
    expected = cluster(c, GROUP_B)
    assert [cl.assigned_cv for cl in expected] == sorted(cl.assigned_cv for cl in expected)
    for _ in range(20):
        shuffled = permute(c, rng.permutation(len(c.patients)).tolist())
        assert cluster(shuffled, GROUP_B) == expected


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 100_000))
def test_clusters_partition_each_group(seed):
    c = random_cohort(seed)
    for g in (GROUP_A, GROUP_B):
        clusters = cluster(c, g)
        ids = [pid for cl in clusters for pid in cl.member_ids]
        assert sorted(ids) == sorted(p.id for p in c.group(g))
        by_id = c.by_id()
        for cl in clusters:
            assert all(by_id[pid].covariates == cl.assigned_cv for pid in cl.member_ids)
        assert len({cl.assigned_cv for cl in clusters}) == len(clusters)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 100_000))
def test_quadratic_path_agrees(seed):
    c = random_cohort(seed, max_clusters=6, dimension=2)
    assert report_json(c, "quadratic", members=True) == report_json(c, "indexed", members=True)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 100_000), st.data())
def test_single_flip_moves_result_by_weight(seed, data):
    c = random_cohort(seed)
    base = dbsem(c)
    i = data.draw(st.integers(0, len(c.patients) - 1))
    p = c.patients[i]
    flipped = Fraction(1) - p.outcome
    patients = list(c.patients)
    patients[i] = type(p)(p.id, p.group, p.covariates, flipped, p.precision)
    after = dbsem(Cohort(tuple(patients), c.dimension, c.precision))

    weight = Fraction(0)
    for m in base.matching.matched:
        if m.a.assigned_cv == p.covariates:
            weight = m.w_a if p.group == GROUP_A else m.w_b
    delta = flipped - p.outcome
    if p.group == GROUP_A:
        assert after.result.r_a - base.result.r_a == weight * delta
        assert after.result.r_b == base.result.r_b
    else:
        assert after.result.r_b - base.result.r_b == weight * delta
        assert after.result.r_a == base.result.r_a


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_pairs_total_matches_greedy(seed):
    c = random_cohort(seed)
    res = dbsem(c)
    assert res.matching.pairs_total == len(greedy_exact_psm(c).pairs)
    for m in res.matching.matched:
        assert m.a.assigned_cv == m.b.assigned_cv
        assert m.size == min(m.a.size, m.b.size)


def test_custom_weighting_plugs_in(two_vs_three):
    def unit(cm):
        base = min_weight(cm)
        return type(base)(sum((m.a.outcome_sum for m in cm.matched), Fraction(0)), base.r_b, base.matched_pairs_total)

    assert dbsem(two_vs_three, weighting=unit).result.r_a == 1


def test_report_renders_exact_and_decimal(two_vs_three):
    r = report(two_vs_three)
    assert r["r_b"] == {"exact": "2/3", "decimal": "0.6666666667"}
    assert r["matches"][0]["S"] == 2
    assert r["k"] == r["l"] == 1
    assert "member_ids" not in r["clusters"][0]
    assert report(two_vs_three, members=True)["clusters"][0]["member_ids"] == ["a1", "a2"]
