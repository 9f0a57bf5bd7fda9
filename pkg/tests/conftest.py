"""Shared session fixtures: the reference ensembles are trained once per test session."""

import time

import pytest

from tforge.cohortgen import generate_cohort, reference_spec
from tforge.model import ModelConfig
from tforge.store import run_ensemble

from _util import ACCEPTANCE_LINES

K = 10
BASE_SEED = 42


def _timed_ensemble(cohort, directory):
    """Grow the store one run at a time so that each run's wall time is known."""
    seconds = []
    for k in range(1, K + 1):
        t0 = time.perf_counter()
        store = run_ensemble(ModelConfig(), cohort, k=k, base_seed=BASE_SEED, directory=directory)
        seconds.append(time.perf_counter() - t0)
    return store, seconds


@pytest.fixture(scope="session")
def reference(tmp_path_factory):
    spec = reference_spec()
    cohort = generate_cohort(spec)
    store, seconds = _timed_ensemble(cohort, tmp_path_factory.mktemp("reference_store"))
    return spec, cohort, store, seconds


@pytest.fixture(scope="session")
def reference_no_jitter(tmp_path_factory):
    spec = reference_spec(jitter=0.0)
    cohort = generate_cohort(spec)
    store, seconds = _timed_ensemble(cohort, tmp_path_factory.mktemp("no_jitter_store"))
    return spec, cohort, store, seconds


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
