"""Exact 1:1 propensity-score matching in several flavours.

``greedy_exact_psm`` walks group A in row order and takes the first (or a
seeded random) unmatched exact partner from B. It is sort-order dependent on
purpose. ``extreme_matching`` builds the best/worst case outcome envelopes,
``exact_psm_with_replacement`` reuses partners, and ``uniform_bootstrap_psm``
samples maximal exact matchings where every eligible partner is equally
likely.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .cohort import GROUP_A, GROUP_B, Cohort, Patient
from .propensity import PropensityModel, propensity_score

STRATEGIES = ("greedy", "replacement", "best_best", "worst_worst", "best_a_worst_b", "worst_a_best_b", "bootstrap")
EXTREME_MODES = ("best_best", "worst_worst", "best_a_worst_b", "worst_a_best_b")
BOOTSTRAP_CHUNK = 1024


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class Matching:
    """Matched ``(a_id, b_id)`` pairs.

    ``reverse_pairs`` is only filled by replacement matching and holds the
    B-to-A direction, still written as ``(a_id, b_id)``.
    """

    pairs: tuple[tuple[str, str], ...]
    strategy: str
    seed: int | None = None
    reverse_pairs: tuple[tuple[str, str], ...] = ()

    @property
    def matched_a(self) -> int:
        return len({a for a, _ in self.pairs})

    @property
    def matched_b(self) -> int:
        return len({b for _, b in self.pairs})

    @property
    def total_matches(self) -> int:
        return len(self.pairs) + len(self.reverse_pairs)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["a_id", "b_id"])
        writer.writerows(self.pairs)
        return out.getvalue()

    def sidecar(self) -> dict:
        d = {
            "strategy": self.strategy,
            "seed": self.seed,
            "counts": {"pairs": len(self.pairs), "matched_a": self.matched_a, "matched_b": self.matched_b},
        }
        if self.strategy == "replacement":
            d["counts"]["reverse_pairs"] = len(self.reverse_pairs)
            d["counts"]["total_matches"] = self.total_matches
        return d

    def write(self, path) -> None:
        """Write ``path`` (pairs) and ``path.json`` (strategy, seed, counts)."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())
        with open(f"{path}.json", "w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.sidecar(), sort_keys=True, indent=2) + "\n")


@dataclass(frozen=True)
class PSEquality:
    """Treat two patients as exact partners when their scores differ by at most ``epsilon``."""

    model: PropensityModel
    epsilon: float = 0.0


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def _buckets(patients: Sequence[Patient]) -> dict[tuple[int, ...], list[Patient]]:
    out: dict[tuple[int, ...], list[Patient]] = {}
    for p in patients:
        out.setdefault(p.covariates, []).append(p)
    return out


def _greedy_covariate(a_side, b_side, rng) -> list[tuple[str, str]]:
    pairs = []
    if rng is None:
        queues = {cv: deque(ps) for cv, ps in _buckets(b_side).items()}
        for x in a_side:
            q = queues.get(x.covariates)
            if q:
                pairs.append((x.id, q.popleft().id))
    else:
        pools = _buckets(b_side)
        for x in a_side:
            pool = pools.get(x.covariates)
            if pool:
                pairs.append((x.id, pool.pop(int(rng.integers(len(pool)))).id))
    return pairs


def _greedy_score(a_side, b_side, eq: PSEquality, rng) -> list[tuple[str, str]]:
    scored = sorted((propensity_score(eq.model, z), i) for i, z in enumerate(b_side))
    values = [s for s, _ in scored]
    matched = [False] * len(b_side)
    pairs = []
    for x in a_side:
        ps = propensity_score(eq.model, x)
        lo = bisect.bisect_left(values, ps - eq.epsilon)
        hi = bisect.bisect_right(values, ps + eq.epsilon)
        candidates = sorted(i for _, i in scored[lo:hi] if not matched[i])
        if not candidates:
            continue
        j = candidates[0] if rng is None else candidates[int(rng.integers(len(candidates)))]
        matched[j] = True
        pairs.append((x.id, b_side[j].id))
    return pairs


def greedy_exact_psm(
    cohort: Cohort, equality: str | PSEquality = "covariate", seed: int | None = None
) -> Matching:
    """One pass of exact 1:1 matching over A in row order.

    Without a seed the first unmatched partner in row order is taken, so the
    result depends on the sort order. With a seed the partner is drawn
    uniformly among the unmatched eligible ones.
    """
    a_side, b_side = cohort.group(GROUP_A), cohort.group(GROUP_B)
    rng = None if seed is None else _rng(seed)
    if equality == "covariate":
        pairs = _greedy_covariate(a_side, b_side, rng)
    elif isinstance(equality, PSEquality):
        pairs = _greedy_score(a_side, b_side, equality, rng)
    else:
        raise ValueError(f"unknown equality {equality!r}")
    return Matching(tuple(pairs), "greedy", seed)


def exact_psm_with_replacement(cohort: Cohort) -> Matching:
    """Match every patient that has an exact partner, reusing partners.

    The partner is the first exact-equal patient of the other group in row
    order. Both directions are produced: ``pairs`` (A to B) and
    ``reverse_pairs`` (B to A).
    """
    a_side, b_side = cohort.group(GROUP_A), cohort.group(GROUP_B)
    first_b = {cv: ps[0] for cv, ps in _buckets(b_side).items()}
    first_a = {cv: ps[0] for cv, ps in _buckets(a_side).items()}
    forward = tuple((x.id, first_b[x.covariates].id) for x in a_side if x.covariates in first_b)
    backward = tuple((first_a[z.covariates].id, z.id) for z in b_side if z.covariates in first_a)
    return Matching(forward, "replacement", None, backward)


def _matched_buckets(cohort: Cohort) -> list[tuple[tuple[int, ...], list[Patient], list[Patient]]]:
    """Equal-covariate groups present on both sides, ordered by covariate vector."""
    a_b = _buckets(cohort.group(GROUP_A))
    b_b = _buckets(cohort.group(GROUP_B))
    return [(cv, a_b[cv], b_b[cv]) for cv in sorted(a_b.keys() & b_b.keys())]


def _require_binary(cohort: Cohort) -> None:
    if not cohort.binary_outcomes:
        raise MatchingError("extreme matching needs binary outcomes (0 = alive, 1 = dead)")


def _pick(members: list[Patient], s: int, best: bool) -> list[Patient]:
    ranked = sorted(enumerate(members), key=lambda t: (t[1].outcome if best else -t[1].outcome, t[0]))
    return [p for _, p in ranked[:s]]


def extreme_matching(cohort: Cohort, mode: str) -> Matching:
    """Valid exact matching with the fewest ("best") or most ("worst") deaths per side.

    Within each group of equal covariates with n A-patients and m
    B-patients, ``min(n, m)`` members are chosen on each side; ties are
    broken by row order.
    """
    if mode not in EXTREME_MODES:
        raise ValueError(f"unknown extreme mode {mode!r}")
    _require_binary(cohort)
    a_mode, b_mode = {
        "best_best": (True, True),
        "worst_worst": (False, False),
        "best_a_worst_b": (True, False),
        "worst_a_best_b": (False, True),
    }[mode]
    pairs = []
    for _, a_members, b_members in _matched_buckets(cohort):
        s = min(len(a_members), len(b_members))
        pairs.extend(
            (x.id, z.id) for x, z in zip(_pick(a_members, s, a_mode), _pick(b_members, s, b_mode))
        )
    return Matching(tuple(pairs), mode)


@dataclass
class _Side:
    """Members of one side that are sampled (size > S) plus the fixed remainder."""

    fixed_total: float
    fixed_ids: list[list[str]]
    ids: list[str]
    outcomes: np.ndarray
    offsets: np.ndarray
    mask: np.ndarray
    segments: list[tuple[int, int, int]]


def _side_layout(groups: list[list[Patient]], sizes: list[int]) -> _Side:
    fixed_total = 0.0
    fixed_ids: list[list[str]] = []
    ids: list[str] = []
    outcomes: list[float] = []
    offsets: list[float] = []
    mask: list[bool] = []
    segments = []
    for g, (members, s) in enumerate(zip(groups, sizes)):
        if s == len(members):
            fixed_total += float(sum(p.outcome for p in members))
            fixed_ids.append([p.id for p in members])
            segments.append((-1, -1, s))
            continue
        fixed_ids.append([])
        start = len(ids)
        for pos, p in enumerate(members):
            ids.append(p.id)
            outcomes.append(float(p.outcome))
            offsets.append(float(len(segments)))
            mask.append(pos < s)
        segments.append((start, len(ids), s))
    return _Side(
        fixed_total,
        fixed_ids,
        ids,
        np.array(outcomes, dtype=float),
        np.array(offsets, dtype=float),
        np.array(mask, dtype=bool),
        segments,
    )


def _layout(cohort: Cohort) -> tuple[_Side, _Side, int]:
    buckets = _matched_buckets(cohort)
    sizes = [min(len(a), len(b)) for _, a, b in buckets]
    return _side_layout([a for _, a, _ in buckets], sizes), _side_layout([b for _, _, b in buckets], sizes), sum(sizes)


def _draw_order(side: _Side, rng: np.random.Generator, rows: int) -> np.ndarray:
    """Per row, member indices sorted so each segment's first S entries are a uniform S-subset."""
    keys = rng.random((rows, len(side.ids)))
    return np.argsort(keys + side.offsets, axis=1, kind="stable")


def _chunk(side_a: _Side, side_b: _Side, seed: int, index: int, count_members: bool):
    rng = _rng(seed, index)
    result = []
    for side in (side_a, side_b):
        order = _draw_order(side, rng, BOOTSTRAP_CHUNK)
        chosen = order[:, side.mask]
        deaths = side.fixed_total + side.outcomes[chosen].sum(axis=1)
        counts = np.bincount(chosen.ravel(), minlength=len(side.ids)) if count_members else None
        result.append((deaths, counts))
    return result


@dataclass(frozen=True)
class BootstrapReport:
    iterations: int
    seed: int
    pairs: int
    mean_deaths_a: float
    mean_deaths_b: float
    std_error_a: float
    std_error_b: float
    min_deaths_a: float
    max_deaths_a: float
    min_deaths_b: float
    max_deaths_b: float
    samples_a: np.ndarray = field(repr=False, compare=False)
    samples_b: np.ndarray = field(repr=False, compare=False)
    selection_frequency: dict[str, float] | None = field(default=None, repr=False, compare=False)

    @property
    def mean_rate_a(self) -> float:
        return self.mean_deaths_a / self.pairs if self.pairs else 0.0

    @property
    def mean_rate_b(self) -> float:
        return self.mean_deaths_b / self.pairs if self.pairs else 0.0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "seed": self.seed,
            "pairs": self.pairs,
            "mean_deaths_a": self.mean_deaths_a,
            "mean_deaths_b": self.mean_deaths_b,
            "mean_rate_a": self.mean_rate_a,
            "mean_rate_b": self.mean_rate_b,
            "std_error_a": self.std_error_a,
            "std_error_b": self.std_error_b,
            "min_deaths_a": self.min_deaths_a,
            "max_deaths_a": self.max_deaths_a,
            "min_deaths_b": self.min_deaths_b,
            "max_deaths_b": self.max_deaths_b,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _std_error(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def uniform_bootstrap_psm(
    cohort: Cohort,
    iterations: int,
    seed: int,
    workers: int = 1,
    track_members: bool = False,
) -> BootstrapReport:
    """Sample ``iterations`` maximal exact 1:1 matchings uniformly.

    In every iteration each matched equal-covariate group of sizes n, m
    contributes a uniformly drawn ``min(n, m)``-subset from each side.
    Iteration ``k`` draws from the substream ``(seed, k // BOOTSTRAP_CHUNK)``
    at row ``k % BOOTSTRAP_CHUNK``, so its sample does not depend on the
    total iteration count or on ``workers``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if seed is None:
        raise ValueError("seed required")
    side_a, side_b, pairs = _layout(cohort)
    n_chunks = -(-iterations // BOOTSTRAP_CHUNK)

    def run(i):
        return _chunk(side_a, side_b, seed, i, track_members)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run, range(n_chunks)))
    else:
        chunks = [run(i) for i in range(n_chunks)]
    deaths_a = np.concatenate([c[0][0] for c in chunks])[:iterations]
    deaths_b = np.concatenate([c[1][0] for c in chunks])[:iterations]

    frequency = None
    if track_members:
        if iterations % BOOTSTRAP_CHUNK:
            raise ValueError(f"member tracking needs iterations divisible by {BOOTSTRAP_CHUNK}")
        frequency = {}
        for k, side in enumerate((side_a, side_b)):
            counts = sum(c[k][1] for c in chunks)
            for pid, n in zip(side.ids, counts):
                frequency[pid] = float(n) / iterations
            for ids in side.fixed_ids:
                for pid in ids:
                    frequency[pid] = 1.0

    return BootstrapReport(
        iterations=iterations,
        seed=seed,
        pairs=pairs,
        mean_deaths_a=float(np.mean(deaths_a)),
        mean_deaths_b=float(np.mean(deaths_b)),
        std_error_a=_std_error(deaths_a),
        std_error_b=_std_error(deaths_b),
        min_deaths_a=float(deaths_a.min()),
        max_deaths_a=float(deaths_a.max()),
        min_deaths_b=float(deaths_b.min()),
        max_deaths_b=float(deaths_b.max()),
        samples_a=deaths_a,
        samples_b=deaths_b,
        selection_frequency=frequency,
    )


def bootstrap_matching(cohort: Cohort, seed: int, iteration: int) -> Matching:
    """The explicit matching sampled by ``uniform_bootstrap_psm`` at ``iteration``."""
    side_a, side_b, _ = _layout(cohort)
    rng = _rng(seed, iteration // BOOTSTRAP_CHUNK)
    row = iteration % BOOTSTRAP_CHUNK
    picks = []
    for side in (side_a, side_b):
        order = _draw_order(side, rng, BOOTSTRAP_CHUNK)[row]
        chosen = []
        for g, (start, _, s) in enumerate(side.segments):
            if start < 0:
                chosen.append(side.fixed_ids[g])
            else:
                sorted_pos = np.nonzero(side.offsets[order] == g)[0][:s]
                chosen.append([side.ids[order[p]] for p in sorted_pos])
        picks.append(chosen)
    pairs = []
    for a_ids, b_ids in zip(*picks):
        pairs.extend(zip(a_ids, b_ids))
    return Matching(tuple(pairs), "bootstrap", seed)


def matching_deaths(matching: Matching, cohort: Cohort) -> tuple[Fraction, Fraction]:
    """Outcome sums over the matched A and B patients (counted once per pair)."""
    by_id = cohort.by_id()
    return (
        sum((by_id[a].outcome for a, _ in matching.pairs), Fraction(0)),
        sum((by_id[b].outcome for _, b in matching.pairs), Fraction(0)),
    )


def is_exact(matching: Matching, cohort: Cohort) -> bool:
    by_id = cohort.by_id()
    return all(
        by_id[a].covariates == by_id[b].covariates for a, b in (*matching.pairs, *matching.reverse_pairs)
    )
