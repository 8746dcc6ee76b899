"""Logistic propensity model: IRLS fit, scores, score differences and
detection of coefficient subset-sum collisions.

A collision is a pair of disjoint covariate index sets ``I != J`` whose slope
coefficients sum to the same value. When one exists, two patients can share a
propensity score while their covariate vectors differ, so score equality no
longer certifies covariate equality.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .cohort import GROUP_B, Cohort, Patient

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 100
SEPARATION_BOUND = 30.0
COLLISION_TOLERANCE = 1e-9
EXACT_SEARCH_LIMIT = 30
SAMPLE_WINDOW = 20


@dataclass(frozen=True)
class PropensityModel:
    """Fitted coefficients: intercept first, then one slope per kept covariate.

    ``dropped_columns`` holds 1-based covariate numbers (``cv_j``) removed as
    constant or collinear before fitting; they contribute nothing to scores.
    """

    coefficients: tuple[float, ...]
    dimension: int
    dropped_columns: tuple[int, ...] = ()
    converged: bool = True
    iterations: int = 0
    gradient_norm: float = 0.0
    separation: bool = False
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        if len(self.coefficients) != self.dimension - len(self.dropped_columns) + 1:
            raise ValueError(
                f"{len(self.coefficients)} coefficients do not fit dimension {self.dimension} "
                f"with {len(self.dropped_columns)} dropped columns"
            )

    @classmethod
    def from_coefficients(cls, intercept: float, slopes: Sequence[float]) -> PropensityModel:
        """A model with fixed coefficients, bypassing any fit."""
        return cls((float(intercept), *map(float, slopes)), len(slopes))

    @property
    def intercept(self) -> float:
        return self.coefficients[0]

    @property
    def kept_columns(self) -> tuple[int, ...]:
        dropped = set(self.dropped_columns)
        return tuple(j for j in range(1, self.dimension + 1) if j not in dropped)

    @property
    def slopes(self) -> tuple[float, ...]:
        """Slopes expanded to all ``dimension`` covariates, zero where dropped."""
        full = [0.0] * self.dimension
        for j, beta in zip(self.kept_columns, self.coefficients[1:]):
            full[j - 1] = beta
        return tuple(full)

    def linear_predictor(self, patient: Patient) -> float:
        if patient.dimension != self.dimension:
            raise ValueError(f"patient dimension {patient.dimension} != model dimension {self.dimension}")
        values = patient.covariate_values()
        eta = self.intercept
        for j, beta in zip(self.kept_columns, self.coefficients[1:]):
            eta += beta * values[j - 1]
        return eta

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coefficients"] = list(self.coefficients)
        d["dropped_columns"] = list(self.dropped_columns)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> PropensityModel:
        coefficients = tuple(float(c) for c in d["coefficients"])
        dropped = tuple(int(j) for j in d.get("dropped_columns", ()))
        return cls(
            coefficients,
            int(d.get("dimension", len(coefficients) - 1 + len(dropped))),
            dropped,
            bool(d.get("converged", True)),
            int(d.get("iterations", 0)),
            float(d.get("gradient_norm", 0.0)),
            bool(d.get("separation", False)),
            float(d.get("tolerance", DEFAULT_TOLERANCE)),
        )

    @classmethod
    def from_json(cls, text: str) -> PropensityModel:
        return cls.from_dict(json.loads(text))


def _logistic(eta: float) -> float:
    if eta >= 0:
        return 1.0 / (1.0 + math.exp(-eta))
    e = math.exp(eta)
    return e / (1.0 + e)


def _expit(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def log_likelihood(coefficients, X: np.ndarray, y: np.ndarray) -> float:
    """Binomial log-likelihood of a logistic model, computed without overflow."""
    eta = X @ np.asarray(coefficients, dtype=float)
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def gradient(coefficients, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    eta = X @ np.asarray(coefficients, dtype=float)
    return X.T @ (y - _expit(eta))


def design_matrix(cohort: Cohort, columns: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Intercept column plus the selected covariates (1-based numbers); y = 1 for group B."""
    if columns is None:
        columns = range(1, cohort.dimension + 1)
    cols = [j - 1 for j in columns]
    scale = 10**cohort.precision
    raw = np.array([p.covariates for p in cohort.patients], dtype=float).reshape(len(cohort), cohort.dimension)
    X = np.column_stack([np.ones(len(cohort)), raw[:, cols] / scale])
    y = np.array([1.0 if p.group == GROUP_B else 0.0 for p in cohort.patients])
    return X, y


def _select_columns(X: np.ndarray) -> tuple[list[int], list[int]]:
    """Greedy rank-increasing selection in header order; returns (kept, dropped) 1-based."""
    kept, dropped = [], []
    basis = X[:, :1]
    rank = 1
    for j in range(1, X.shape[1]):
        col = X[:, j]
        if np.all(col == col[0]):
            dropped.append(j)
            continue
        trial = np.column_stack([basis, col])
        r = np.linalg.matrix_rank(trial)
        if r > rank:
            basis, rank = trial, r
            kept.append(j)
        else:
            dropped.append(j)
    return kept, dropped


def fit_logistic(
    cohort: Cohort,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> PropensityModel:
    """Maximum-likelihood logistic regression of group membership (B = 1) on covariates.

    Newton/IRLS with step halving on the log-likelihood. Constant and collinear
    covariate columns are dropped in header order before fitting. The fit is
    flagged as separated (and not converged) when a coefficient exceeds
    ``SEPARATION_BOUND`` in magnitude with the gradient still above tolerance,
    or when the fitted probabilities reproduce the labels exactly.
    """
    cohort.require_both_groups()
    X_full, y = design_matrix(cohort)
    kept, dropped = _select_columns(X_full)
    X = X_full[:, [0] + kept]
    beta = np.zeros(X.shape[1])
    ll = log_likelihood(beta, X, y)
    g = gradient(beta, X, y)
    separation = False
    iterations = 0
    while np.linalg.norm(g) >= tolerance and iterations < max_iterations:
        iterations += 1
        p = _expit(X @ beta)
        w = p * (1.0 - p)
        H = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            candidate = beta + t * step
            ll_new = log_likelihood(candidate, X, y)
            if ll_new >= ll or t < 1e-10:
                break
            t /= 2.0
        if ll_new < ll:
            break
        beta, ll = candidate, ll_new
        g = gradient(beta, X, y)
        if np.max(np.abs(beta)) > SEPARATION_BOUND and np.linalg.norm(g) >= tolerance:
            separation = True
            break
    gnorm = float(np.linalg.norm(g))
    fitted = _expit(X @ beta)
    if np.max(np.abs(fitted - y)) < 1e-6:
        separation = True
    return PropensityModel(
        coefficients=tuple(float(b) for b in beta),
        dimension=cohort.dimension,
        dropped_columns=tuple(dropped),
        converged=bool(gnorm < tolerance and not separation),
        iterations=iterations,
        gradient_norm=gnorm,
        separation=separation,
        tolerance=tolerance,
    )


def propensity_score(model: PropensityModel, patient: Patient) -> float:
    return _logistic(model.linear_predictor(patient))


def psd(model: PropensityModel, x: Patient, z: Patient) -> float:
    return abs(propensity_score(model, x) - propensity_score(model, z))


@dataclass(frozen=True)
class CollisionReport:
    """Colliding index-set pairs ``(I, J)`` (1-based covariate numbers).

    Each pair is canonical: ``I`` and ``J`` are disjoint and ``I`` holds the
    smallest index of ``I | J``. ``complete`` is False when the search was
    sampled; ``truncated`` when more pairs existed than were recorded.
    """

    collisions: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]
    tolerance: float
    complete: bool = True
    truncated: bool = False
    columns: tuple[int, ...] = field(default=())

    @property
    def collision_free(self) -> bool:
        return not self.collisions

    def to_dict(self) -> dict:
        return {
            "collisions": [{"I": list(i), "J": list(j)} for i, j in self.collisions],
            "tolerance": self.tolerance,
            "complete": self.complete,
            "truncated": self.truncated,
        }


def _signed_sums(values: np.ndarray) -> np.ndarray:
    """All sums sum(e_k * v_k) with e_k in {0, +1, -1}; index digit k (base 3) encodes e_k."""
    sums = np.zeros(1)
    for v in values:
        sums = np.concatenate([sums, sums + v, sums - v])
    return sums


def _decode(index: int, m: int) -> list[int]:
    digits = []
    for _ in range(m):
        index, d = divmod(index, 3)
        digits.append((0, 1, -1)[d])
    return digits


def _exact_collisions(betas: np.ndarray, tolerance: float, limit: int) -> tuple[list, bool]:
    n = len(betas)
    h = n // 2
    left, right = _signed_sums(betas[:h]), _signed_sums(betas[h:])
    order = np.argsort(right, kind="stable")
    rs = right[order]
    lo = np.searchsorted(rs, -left - tolerance, side="left")
    hi = np.searchsorted(rs, -left + tolerance, side="right")
    found = []
    truncated = False
    for li in np.nonzero(hi > lo)[0]:
        ldig = _decode(int(li), h)
        for pos in range(lo[li], hi[li]):
            signs = ldig + _decode(int(order[pos]), n - h)
            nonzero = [s for s in signs if s]
            if not nonzero or nonzero[0] != 1:
                continue
            if len(found) >= limit:
                truncated = True
                break
            found.append(
                (tuple(k for k, s in enumerate(signs) if s == 1), tuple(k for k, s in enumerate(signs) if s == -1))
            )
        if truncated:
            break
    return found, truncated


def detect_coefficient_collisions(
    model: PropensityModel | Sequence[float],
    tolerance: float = COLLISION_TOLERANCE,
    max_report: int = 10_000,
    samples: int = 64,
    seed: int = 0,
) -> CollisionReport:
    """Find disjoint index sets whose slope sums agree within ``tolerance``.

    Accepts a model (its kept slopes are searched) or a bare slope sequence.
    Up to ``EXACT_SEARCH_LIMIT`` slopes are searched exhaustively by
    meet-in-the-middle over signed subset sums; beyond that, ``samples``
    random windows of ``SAMPLE_WINDOW`` slopes are searched and the report is marked
    incomplete.
    """
    if isinstance(model, PropensityModel):
        columns = model.kept_columns
        betas = np.array(model.coefficients[1:], dtype=float)
    else:
        betas = np.array(list(model), dtype=float)
        columns = tuple(range(1, len(betas) + 1))
    if len(betas) == 0:
        return CollisionReport((), tolerance, columns=columns)

    def relabel(pairs, index_map):
        return [
            (tuple(columns[index_map[k]] for k in i), tuple(columns[index_map[k]] for k in j)) for i, j in pairs
        ]

    if len(betas) <= EXACT_SEARCH_LIMIT:
        pairs, truncated = _exact_collisions(betas, tolerance, max_report)
        result = relabel(pairs, list(range(len(betas))))
        complete = True
    else:
        rng = np.random.default_rng(seed)
        seen = set()
        truncated = False
        for _ in range(samples):
            window = np.sort(rng.choice(len(betas), size=SAMPLE_WINDOW, replace=False))
            pairs, trunc = _exact_collisions(betas[window], tolerance, max_report)
            truncated |= trunc
            seen.update(relabel(pairs, list(window)))
        result = list(seen)
        complete = False
    return CollisionReport(tuple(sorted(result)), tolerance, complete, truncated, columns)
