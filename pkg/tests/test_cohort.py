from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from balmatch.cohort import (
    CohortError,
    SortKey,
    format_fixed,
    make_patient,
    manhattan,
    parse_cohort,
    parse_fixed,
    permute,
    reverse,
    serialize_cohort,
)

from conftest import cohort_of


def test_minimal_file():
    c = parse_cohort("id,group,outcome,cv_1\np,A,0,1.5\nq,B,1,2\n")
    assert (c.a, c.b, c.dimension) == (1, 1, 1)
    assert c.patients[0].covariates == (1_500_000,)


def test_fixed_point_scaling():
    assert parse_fixed("1.50", 2) == 150
    assert format_fixed(150, 2) == "1.50"
    with pytest.raises(ValueError, match="decimal places"):
        parse_fixed("1.505", 2)


@pytest.mark.parametrize(
    "text, message",
    [
        ("id,group,outcome,cv_1\np,A,0,-0.5\n", "negative covariate"),
        ("id,group,outcome,cv_1\np,A,0,1\np,B,0,1\n", "duplicate id"),
        ("id,group,outcome,cv_1\np,C,0,1\n", "unknown group"),
        ("id,group,cv_1\np,A,1\n", "missing column 'outcome'"),
        ("id,group,outcome,cv_1\np,A,0,abc\n", "non-numeric"),
        ("id,group,outcome,cv_1\np,A,x,1\n", "non-numeric outcome"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(CohortError, match=message):
        parse_cohort(text)


def test_error_reports_row_number():
    with pytest.raises(CohortError) as err:
        parse_cohort("id,group,outcome,cv_1\np,A,0,1\nq,B,0,-1\n")
    assert err.value.row == 3


def test_tab_delimited_and_numeric_groups():
    c = parse_cohort("id\tgroup\toutcome\tcv_1\np\t0\t1\t3\nq\t1\t0\t3\n", precision=0)
    assert [p.group for p in c.patients] == ["A", "B"]


def test_column_order_is_canonicalized():
    a = parse_cohort("id,group,outcome,cv_1,cv_2\np,A,0,1,2\n")
    b = parse_cohort("cv_2,outcome,id,cv_1,group\n2,0,p,1,A\n")
    assert a == b


def test_covariate_gap_rejected():
    with pytest.raises(CohortError, match="without gaps"):
        parse_cohort("id,group,outcome,cv_1,cv_3\np,A,0,1,2\n")


def test_permute_identity_is_byte_identical(two_vs_three):
    same = permute(two_vs_three, list(range(5)))
    assert serialize_cohort(same) == serialize_cohort(two_vs_three)


def test_sort_key_descending_example():
    c = cohort_of([("x2", "A", [0, 1, 0], 0), ("x1", "A", [1, 0, 1], 0)])
    assert [p.id for p in permute(c, SortKey("cv_1", descending=True)).patients] == ["x1", "x2"]


def test_descending_sort_is_stable():
    c = cohort_of([("p", "A", [1], 0), ("q", "B", [0], 0), ("r", "B", [1], 0)])
    assert [p.id for p in permute(c, SortKey.parse("cv_1:desc")).patients] == ["p", "r", "q"]


def test_reverse_twice(two_vs_three):
    assert reverse(reverse(two_vs_three)) == two_vs_three


def test_invalid_permutation(two_vs_three):
    with pytest.raises(ValueError, match="invalid permutation"):
        permute(two_vs_three, [0, 1, 2])
    with pytest.raises(ValueError, match="invalid permutation"):
        permute(two_vs_three, [0, 0, 1, 2, 3])


def test_manhattan_examples():
    p = make_patient("p", "A", [1, 0, 1])
    q = make_patient("q", "B", [0, 1, 0])
    assert manhattan(p, p) == 0
    assert manhattan(p, q) == 3
    assert manhattan(make_patient("r", "A", ["0.25"]), make_patient("s", "B", ["1"])) == Fraction(3, 4)


def test_manhattan_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        manhattan(make_patient("p", "A", [1]), make_patient("q", "B", [1, 2]))


cv_values = st.decimals(min_value=0, max_value=100, places=2, allow_nan=False, allow_infinity=False)
rows = st.lists(
    st.tuples(st.sampled_from("AB"), st.lists(cv_values, min_size=3, max_size=3), st.sampled_from(["0", "1", "0.5"])),
    min_size=1,
    max_size=30,
)


def _cohort_from(rows):
    lines = ["id,group,outcome,cv_1,cv_2,cv_3"]
    lines += [f"id{i},{g},{o},{','.join(str(v) for v in cv)}" for i, (g, cv, o) in enumerate(rows)]
    return parse_cohort("\n".join(lines) + "\n", precision=2)


@settings(max_examples=60, deadline=None)
@given(rows)
def test_serialize_roundtrip(rows):
    c = _cohort_from(rows)
    assert parse_cohort(serialize_cohort(c), precision=2) == c


@settings(max_examples=60, deadline=None)
@given(rows, st.randoms(use_true_random=False))
def test_manhattan_zero_iff_equal_and_symmetric(rows, rnd):
    c = _cohort_from(rows)
    ps = list(c.patients)
    for _ in range(20):
        p, q = rnd.choice(ps), rnd.choice(ps)
        assert manhattan(p, q) == manhattan(q, p)
        assert (manhattan(p, q) == 0) == (p.covariates == q.covariates)


def test_permute_preserves_multiset(two_vs_three):
    import random

    rnd = random.Random(0)
    for _ in range(1000):
        order = list(range(len(two_vs_three)))
        rnd.shuffle(order)
        assert permute(two_vs_three, order).same_dataset(two_vs_three)
