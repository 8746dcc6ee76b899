"""Patients, cohorts and the delimited file format they are read from.

Covariates are stored as scaled integers (fixed point) so that equality of
covariate vectors is exact. A covariate written ``1.50`` at precision 2 is
held as the integer ``150``.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Iterable, NamedTuple, Sequence

DEFAULT_PRECISION = 6

GROUP_A = "A"
GROUP_B = "B"
_GROUP_LABELS = {"A": GROUP_A, "B": GROUP_B, "0": GROUP_A, "1": GROUP_B}
_COVARIATE_COLUMN = re.compile(r"^cv_(\d+)$")
_REQUIRED = ("id", "group", "outcome")


class CohortError(ValueError):
    """Raised for malformed cohort input. ``row`` is the 1-based file line."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Patient:
    id: str
    group: str
    covariates: tuple[int, ...]
    outcome: Fraction
    precision: int = DEFAULT_PRECISION

    def __post_init__(self):
        if self.group not in (GROUP_A, GROUP_B):
            raise CohortError(f"patient {self.id!r} has unknown group {self.group!r}")
        if any(v < 0 for v in self.covariates):
            raise CohortError(f"patient {self.id!r} has a negative covariate")

    @property
    def dimension(self) -> int:
        return len(self.covariates)

    def covariate_values(self) -> tuple[float, ...]:
        scale = 10**self.precision
        return tuple(v / scale for v in self.covariates)

    def exact_covariates(self) -> tuple[Fraction, ...]:
        scale = 10**self.precision
        return tuple(Fraction(v, scale) for v in self.covariates)


@dataclass(frozen=True)
class Cohort:
    """Ordered two-group collection of patients; row order is the sort order."""

    patients: tuple[Patient, ...]
    dimension: int
    precision: int = DEFAULT_PRECISION

    def __post_init__(self):
        seen = set()
        for p in self.patients:
            if p.dimension != self.dimension:
                raise CohortError(f"patient {p.id!r} has {p.dimension} covariates, expected {self.dimension}")
            if p.precision != self.precision:
                raise CohortError(f"patient {p.id!r} stored at precision {p.precision}, expected {self.precision}")
            if p.id in seen:
                raise CohortError(f"duplicate id {p.id!r}")
            seen.add(p.id)

    def __len__(self) -> int:
        return len(self.patients)

    def group(self, label: str) -> tuple[Patient, ...]:
        return tuple(p for p in self.patients if p.group == label)

    @property
    def a(self) -> int:
        return sum(1 for p in self.patients if p.group == GROUP_A)

    @property
    def b(self) -> int:
        return len(self.patients) - self.a

    @property
    def binary_outcomes(self) -> bool:
        return all(p.outcome in (0, 1) for p in self.patients)

    def by_id(self) -> dict[str, Patient]:
        return {p.id: p for p in self.patients}

    def multiset_key(self) -> list[tuple]:
        """Order-free identity of the dataset: sorted (group, covariates, outcome)."""
        return sorted((p.group, p.covariates, p.outcome) for p in self.patients)

    def same_dataset(self, other: Cohort) -> bool:
        return self.multiset_key() == other.multiset_key()

    def require_both_groups(self) -> None:
        if self.a < 1 or self.b < 1:
            raise CohortError(f"both groups must be non-empty (a={self.a}, b={self.b})")


def parse_fixed(text: str, precision: int) -> int:
    """Parse a decimal string into an integer scaled by ``10**precision``.

    Values carrying more decimal places than ``precision`` are rejected rather
    than rounded.
    """
    try:
        value = Decimal(text.strip())
    except InvalidOperation:
        raise ValueError(f"non-numeric value {text!r}") from None
    if not value.is_finite():
        raise ValueError(f"non-numeric value {text!r}")
    scaled = value.scaleb(precision)
    if scaled != scaled.to_integral_value():
        raise ValueError(f"value {text!r} has more than {precision} decimal places")
    return int(scaled)


def format_fixed(value: int, precision: int) -> str:
    if precision == 0:
        return str(value)
    sign = "-" if value < 0 else ""
    whole, frac = divmod(abs(value), 10**precision)
    return f"{sign}{whole}.{frac:0{precision}d}"


def format_exact_decimal(value: Fraction) -> str:
    """Render a fraction with a terminating decimal expansion exactly."""
    if value.denominator == 1:
        return str(value.numerator)
    den = value.denominator
    digits = 0
    while 10**digits % den:
        digits += 1
        if digits > 60:
            raise ValueError(f"{value} has no short terminating decimal expansion")
    scaled = value.numerator * (10**digits // den)
    return format_fixed(scaled, digits).rstrip("0")


def _parse_outcome(text: str) -> Fraction:
    try:
        return Fraction(Decimal(text.strip()))
    except (InvalidOperation, ValueError):
        raise ValueError(f"non-numeric outcome {text!r}") from None


def _covariate_columns(header: Sequence[str]) -> list[tuple[int, int]]:
    """(covariate number, column position) sorted by covariate number."""
    found = []
    for pos, name in enumerate(header):
        m = _COVARIATE_COLUMN.match(name)
        if m:
            found.append((int(m.group(1)), pos))
        elif name not in _REQUIRED:
            raise CohortError(f"unexpected column {name!r}", row=1)
    found.sort()
    numbers = [n for n, _ in found]
    if numbers != list(range(1, len(numbers) + 1)):
        raise CohortError(f"covariate columns must be cv_1..cv_s without gaps, got {numbers}", row=1)
    return found


def parse_cohort(text: str, precision: int = DEFAULT_PRECISION) -> Cohort:
    """Parse a header-bearing comma- or tab-delimited table into a Cohort.

    Columns are located by header name, so their order in the file does not
    matter. Row order is preserved as the sort order.
    """
    if precision < 0:
        raise ValueError("precision must be non-negative")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise CohortError("empty input", row=1)
    delimiter = "\t" if "\t" in lines[0] else ","
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    header[0] = header[0].lstrip("\ufeff")
    for name in _REQUIRED:
        if name not in header:
            raise CohortError(f"missing column {name!r}", row=1)
    if len(set(header)) != len(header):
        raise CohortError("repeated column name in header", row=1)
    cov_cols = _covariate_columns(header)
    if not cov_cols:
        raise CohortError("no covariate columns (cv_1..cv_s)", row=1)
    pos = {name: i for i, name in enumerate(header)}

    patients = []
    seen: set[str] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise CohortError(f"expected {len(header)} cells, found {len(row)}", row=lineno)
        pid = row[pos["id"]].strip()
        if not pid:
            raise CohortError("empty id", row=lineno)
        if pid in seen:
            raise CohortError(f"duplicate id {pid!r}", row=lineno)
        seen.add(pid)
        label = row[pos["group"]].strip()
        if label not in _GROUP_LABELS:
            raise CohortError(f"unknown group label {label!r}", row=lineno)
        try:
            outcome = _parse_outcome(row[pos["outcome"]])
            covariates = tuple(parse_fixed(row[c], precision) for _, c in cov_cols)
        except ValueError as exc:
            raise CohortError(str(exc), row=lineno) from None
        if any(v < 0 for v in covariates):
            raise CohortError("negative covariate", row=lineno)
        patients.append(Patient(pid, _GROUP_LABELS[label], covariates, outcome, precision))
    return Cohort(tuple(patients), len(cov_cols), precision)


def read_cohort(path, precision: int = DEFAULT_PRECISION) -> Cohort:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_cohort(fh.read(), precision)


def serialize_cohort(cohort: Cohort, delimiter: str = ",") -> str:
    out = io.StringIO()
    writer = csv.writer(out, delimiter=delimiter, lineterminator="\n")
    writer.writerow(["id", "group", "outcome"] + [f"cv_{i}" for i in range(1, cohort.dimension + 1)])
    for p in cohort.patients:
        writer.writerow(
            [p.id, p.group, format_exact_decimal(p.outcome)]
            + [format_fixed(v, cohort.precision) for v in p.covariates]
        )
    return out.getvalue()


class SortKey(NamedTuple):
    column: str
    descending: bool = False

    @classmethod
    def parse(cls, text: str) -> SortKey:
        """``cv_1``, ``cv_1:desc`` or ``outcome:asc``."""
        column, _, direction = text.partition(":")
        if direction not in ("", "asc", "desc"):
            raise ValueError(f"unknown sort direction {direction!r}")
        return cls(column, direction == "desc")


def _sort_value(p: Patient, column: str):
    if column in ("id", "group"):
        return getattr(p, column)
    if column == "outcome":
        return p.outcome
    m = _COVARIATE_COLUMN.match(column)
    if not m or not 1 <= int(m.group(1)) <= p.dimension:
        raise ValueError(f"unknown sort column {column!r}")
    return p.covariates[int(m.group(1)) - 1]


def permute(cohort: Cohort, order: Sequence[int] | SortKey) -> Cohort:
    """Reorder a cohort by a 0-based permutation or a stable column sort."""
    if isinstance(order, SortKey):
        patients = sorted(
            cohort.patients, key=lambda p: _sort_value(p, order.column), reverse=order.descending
        )
        return Cohort(tuple(patients), cohort.dimension, cohort.precision)
    order = list(order)
    if len(order) != len(cohort.patients) or sorted(order) != list(range(len(order))):
        raise ValueError(f"invalid permutation of length {len(order)} for {len(cohort.patients)} patients")
    return Cohort(tuple(cohort.patients[i] for i in order), cohort.dimension, cohort.precision)


def reverse(cohort: Cohort) -> Cohort:
    return permute(cohort, list(range(len(cohort) - 1, -1, -1)))


def manhattan(p: Patient, q: Patient) -> Fraction:
    if p.dimension != q.dimension:
        raise ValueError(f"dimension mismatch: {p.dimension} vs {q.dimension}")
    if p.precision != q.precision:
        raise ValueError("patients stored at different precisions")
    return Fraction(sum(abs(x - y) for x, y in zip(p.covariates, q.covariates)), 10**p.precision)


def make_patient(
    pid: str, group: str, covariates: Iterable, outcome=0, precision: int = DEFAULT_PRECISION
) -> Patient:
    """Build a patient from human-scale covariate values (ints, strings, Fractions)."""
    scaled = tuple(
        parse_fixed(_fraction_text(v, precision) if isinstance(v, Fraction) else str(v), precision)
        for v in covariates
    )
    return Patient(pid, _GROUP_LABELS[str(group)], scaled, Fraction(outcome), precision)


def _fraction_text(value: Fraction, precision: int) -> str:
    scaled = value * 10**precision
    if scaled.denominator != 1:
        raise ValueError(f"{value} not representable at precision {precision}")
    return format_fixed(scaled.numerator, precision)


def make_cohort(patients: Sequence[Patient]) -> Cohort:
    if not patients:
        raise CohortError("a cohort needs at least one patient")
    return Cohort(tuple(patients), patients[0].dimension, patients[0].precision)
