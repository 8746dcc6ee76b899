"""Deterministic synthetic cohorts with a prescribed exact cluster structure."""

from __future__ import annotations

from fractions import Fraction
from typing import Any

import numpy as np

from .cohort import GROUP_A, GROUP_B, Cohort, Patient, make_patient, parse_fixed


class SynthError(ValueError):
    pass


def _check_spec(spec: dict[str, Any]) -> list[dict]:
    clusters = spec.get("clusters") or []
    if not clusters:
        raise SynthError("synthetic spec needs at least one cluster")
    dims = {len(c["cv"]) for c in clusters}
    if len(dims) != 1:
        raise SynthError("all cluster covariate vectors must share one dimension")
    seen = set()
    for i, c in enumerate(clusters):
        for side in ("a", "b"):
            size, deaths = int(c.get(f"size_{side}", 0)), int(c.get(f"deaths_{side}", 0))
            if size < 0 or not 0 <= deaths <= size:
                raise SynthError(f"cluster {i}: need 0 <= deaths_{side} <= size_{side}")
        if int(c.get("size_a", 0)) + int(c.get("size_b", 0)) == 0:
            raise SynthError(f"cluster {i} is empty")
        key = tuple(str(v) for v in c["cv"])
        if key in seen:
            raise SynthError(f"cluster {i} repeats covariate vector {list(c['cv'])}")
        seen.add(key)
    return clusters


def synth_cohort(spec: dict[str, Any]) -> Cohort:
    """Build a cohort from ``{"clusters": [...], "noise": n, "seed": s, "precision": p}``.

    Each cluster entry is ``{"cv", "size_a", "size_b", "deaths_a", "deaths_b"}``.
    Noise patients get fresh covariate vectors distinct from every cluster and
    from each other. Rows are shuffled with the seed; ids follow row order.
    """
    clusters = _check_spec(spec)
    seed = int(spec.get("seed", 0))
    precision = int(spec.get("precision", 0))
    noise = int(spec.get("noise", 0))
    if noise < 0:
        raise SynthError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    dim = len(clusters[0]["cv"])

    rows: list[tuple[str, tuple[int, ...], int]] = []
    used = set()
    for c in clusters:
        cv = tuple(parse_fixed(str(v), precision) for v in c["cv"])
        if any(v < 0 for v in cv):
            raise SynthError("covariates must be non-negative")
        used.add(cv)
        for side, group in (("a", GROUP_A), ("b", GROUP_B)):
            size, deaths = int(c.get(f"size_{side}", 0)), int(c.get(f"deaths_{side}", 0))
            rows.extend((group, cv, 1 if k < deaths else 0) for k in range(size))

    attempts = 0
    while noise:
        attempts += 1
        if attempts > 1000 * (noise + 10):
            raise SynthError("could not place noise patients on distinct covariate vectors")
        cv = tuple(int(v) * 10**precision for v in rng.integers(0, 10, size=dim))
        if cv in used:
            continue
        used.add(cv)
        rows.append((GROUP_A if rng.random() < 0.5 else GROUP_B, cv, int(rng.random() < 0.1)))
        noise -= 1

    order = rng.permutation(len(rows))
    patients = [
        Patient(f"p{i + 1:05d}", rows[j][0], rows[j][1], Fraction(rows[j][2]), precision)
        for i, j in enumerate(order)
    ]
    return Cohort(tuple(patients), dim, precision)


def random_cluster_spec(
    seed: int,
    max_clusters: int = 10,
    max_size: int = 8,
    dimension: int = 3,
    death_rate: float = 0.3,
    allow_unmatched: bool = True,
) -> dict[str, Any]:
    """Random spec of up to ``max_clusters`` clusters with sizes in ``[1, max_size]``.

    With ``allow_unmatched`` some clusters have an empty side.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_clusters + 1))
    cvs = set()
    while len(cvs) < n:
        cvs.add(tuple(int(v) for v in rng.integers(0, 4, size=dimension)))
    clusters = []
    for cv in sorted(cvs):
        sizes = [int(rng.integers(1, max_size + 1)), int(rng.integers(1, max_size + 1))]
        if allow_unmatched and rng.random() < 0.2:
            sizes[int(rng.integers(2))] = 0
        deaths = [int(rng.binomial(s, death_rate)) for s in sizes]
        clusters.append(
            {"cv": list(cv), "size_a": sizes[0], "size_b": sizes[1], "deaths_a": deaths[0], "deaths_b": deaths[1]}
        )
    return {"clusters": clusters, "seed": seed}


def random_cohort(seed: int, **kwargs) -> Cohort:
    return synth_cohort(random_cluster_spec(seed, **kwargs))


def registry_like(
    n_a: int, n_b: int, dimension: int = 19, seed: int = 0, death_rate: float = 0.04, precision: int = 0
) -> Cohort:
    """Large cohort with skewed low-cardinality covariates, so exact duplicates are common.

    Group B is shifted towards higher covariate levels to mimic treatment
    selection.
    """
    rng = np.random.default_rng(seed)
    levels = rng.integers(2, 4, size=dimension)
    skew = rng.uniform(1.5, 6.0, size=dimension)

    def draw(n, shift):
        u = rng.random((n, dimension)) ** (skew + shift)
        return np.minimum((u * levels).astype(np.int64), levels - 1)

    cv_a, cv_b = draw(n_a, 1.5), draw(n_b, 0.0)
    out_a = rng.random(n_a) < death_rate
    out_b = rng.random(n_b) < death_rate * 0.7
    scale = 10**precision
    patients = [
        Patient(f"a{i + 1:06d}", GROUP_A, tuple(int(v) * scale for v in row), Fraction(int(o)), precision)
        for i, (row, o) in enumerate(zip(cv_a.tolist(), out_a.tolist()))
    ] + [
        Patient(f"b{i + 1:06d}", GROUP_B, tuple(int(v) * scale for v in row), Fraction(int(o)), precision)
        for i, (row, o) in enumerate(zip(cv_b.tolist(), out_b.tolist()))
    ]
    order = rng.permutation(len(patients))
    return Cohort(tuple(patients[i] for i in order), dimension, precision)


def demo_cohort() -> Cohort:
    """The 1-vs-2 sort-order demo: one A patient, two equal B patients, one of whom died."""
    return Cohort(
        (
            make_patient("a1", "A", [1, 0, 1], 0, 0),
            make_patient("b1", "B", [1, 0, 1], 1, 0),
            make_patient("b2", "B", [1, 0, 1], 0, 0),
        ),
        3,
        0,
    )
