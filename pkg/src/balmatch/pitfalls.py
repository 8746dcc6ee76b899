"""Reproducible demonstrations of where greedy exact PSM goes wrong,
each set against the DBSeM result on the same data."""

from __future__ import annotations

from fractions import Fraction

from .cohort import Cohort, SortKey, permute, reverse
from .dbsem import dbsem, rational, report as dbsem_report, usage_report
from .propensity import PropensityModel, detect_coefficient_collisions, fit_logistic
from .psm import PSEquality, exact_psm_with_replacement, greedy_exact_psm, is_exact, matching_deaths


def _greedy_row(label: str, cohort: Cohort, seed=None) -> dict:
    m = greedy_exact_psm(cohort, seed=seed)
    da, db = matching_deaths(m, cohort)
    return {
        "label": label,
        "pairs": len(m.pairs),
        "deaths_a": rational(da),
        "deaths_b": rational(db),
        "pair_ids": [list(p) for p in m.pairs],
    }


def sort_order(cohort: Cohort, key: SortKey | None = None) -> dict:
    """Greedy PSM and DBSeM on the given row order and on a second order."""
    other = reverse(cohort) if key is None else permute(cohort, key)
    label = "reversed rows" if key is None else f"sorted by {key.column} {'desc' if key.descending else 'asc'}"
    runs = [_greedy_row("input order", cohort), _greedy_row(label, other)]
    reports = [dbsem_report(cohort), dbsem_report(other)]
    return {
        "greedy": runs,
        "greedy_differs": runs[0]["pair_ids"] != runs[1]["pair_ids"],
        "greedy_deaths_differ": [runs[0]["deaths_a"], runs[0]["deaths_b"]]
        != [runs[1]["deaths_a"], runs[1]["deaths_b"]],
        "dbsem": {
            "r_a": reports[0]["r_a"],
            "r_b": reports[0]["r_b"],
            "matched_pairs_total": reports[0]["matched_pairs_total"],
        },
        "dbsem_identical": reports[0] == reports[1],
    }


def randomness(cohort: Cohort, seeds=(1, 2, 3, 4)) -> dict:
    runs = [_greedy_row(f"seed {s}", cohort, s) for s in seeds]
    res = dbsem(cohort).result
    return {
        "greedy": runs,
        "distinct_results": len({(r["deaths_a"]["exact"], r["deaths_b"]["exact"]) for r in runs}),
        "dbsem": {"r_a": rational(res.r_a), "r_b": rational(res.r_b)},
    }


def incomplete(cohort: Cohort) -> dict:
    greedy = greedy_exact_psm(cohort)
    res = dbsem(cohort)
    usage = usage_report(res.matching, cohort)
    repl = exact_psm_with_replacement(cohort)
    return {
        "greedy_pairs": len(greedy.pairs),
        "greedy_usage_a": rational(Fraction(len(greedy.pairs), cohort.a) if cohort.a else 0),
        "greedy_usage_b": rational(Fraction(len(greedy.pairs), cohort.b) if cohort.b else 0),
        "dbsem_member_fraction_a": rational(usage.member_fraction_a),
        "dbsem_member_fraction_b": rational(usage.member_fraction_b),
        "replacement_matches_a_to_b": len(repl.pairs),
        "replacement_matches_b_to_a": len(repl.reverse_pairs),
        "replacement_total": repl.total_matches,
    }


def collision(cohort: Cohort, model: PropensityModel | None = None, epsilon: float = 1e-12) -> dict:
    """Score-based exact matching against covariate matching under a (possibly forced) model."""
    if model is None:
        model = fit_logistic(cohort)
    report = detect_coefficient_collisions(model)
    by_score = greedy_exact_psm(cohort, PSEquality(model, epsilon))
    by_cv = greedy_exact_psm(cohort)
    by_id = cohort.by_id()
    spurious = [list(p) for p in by_score.pairs if by_id[p[0]].covariates != by_id[p[1]].covariates]
    return {
        "coefficients": list(model.coefficients),
        "collisions": report.to_dict(),
        "score_pairs": len(by_score.pairs),
        "covariate_pairs": len(by_cv.pairs),
        "spurious_pairs": spurious,
        "score_matching_exact": is_exact(by_score, cohort),
    }
