"""Shared fixtures: the three reproduction runs are expensive (full
certificate-derived horizons), so they run once per session and are shared
between module tests and the acceptance suite."""
import time

import numpy as np
import pytest

from waveconsensus import harness
from waveconsensus.graph import build_topology


@pytest.fixture(scope="session")
def path3_topology():
    return build_topology([[0, 1, 0], [1, 0, 1], [0, 1, 0]], [1, 0, 0])


@pytest.fixture(scope="session")
def reference_matrix():
    return np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])


def _timed_reproduce(test_id, tmp_path_factory):
    out = tmp_path_factory.mktemp(f"repro{test_id}")
    t0 = time.perf_counter()
    result = harness.run_reproduce(test_id, str(out))
    elapsed = time.perf_counter() - t0
    return result, elapsed


@pytest.fixture(scope="session")
def test1_run(tmp_path_factory):
    return _timed_reproduce(1, tmp_path_factory)


@pytest.fixture(scope="session")
def test2_run(tmp_path_factory):
    return _timed_reproduce(2, tmp_path_factory)


@pytest.fixture(scope="session")
def test3_run(tmp_path_factory):
    return _timed_reproduce(3, tmp_path_factory)
