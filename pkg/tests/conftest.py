from pathlib import Path

import pytest

from balmatch.cohort import Cohort, make_patient
from balmatch.synth import synth_cohort

DATA = Path(__file__).resolve().parents[1] / "src" / "balmatch" / "data"


def cohort_of(rows, precision=0):
    """rows: (id, group, covariates, outcome)."""
    patients = [make_patient(pid, g, cv, out, precision) for pid, g, cv, out in rows]
    return Cohort(tuple(patients), patients[0].dimension, precision)


@pytest.fixture
def two_vs_three():
    # A obs {1, 0}, B obs {1, 0, 0}, one shared covariate vector
    return cohort_of(
        [
            ("a1", "A", [1, 0], 1),
            ("a2", "A", [1, 0], 0),
            ("b1", "B", [1, 0], 1),
            ("b2", "B", [1, 0], 0),
            ("b3", "B", [1, 0], 0),
        ]
    )


@pytest.fixture
def one_vs_two():
    return cohort_of([("a1", "A", [1, 0, 1], 0), ("b1", "B", [1, 0, 1], 1), ("b2", "B", [1, 0, 1], 0)])


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def synth():
    return synth_cohort


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.RESULTS:
        terminalreporter.write_line(line)
