from __future__ import annotations

import functools
import time

import pytest
from hypothesis import HealthCheck, settings

from newtonflow.basins import oracle_grid, sample_grid
from newtonflow.problems import builtin_problem

settings.register_profile(
    "thorough",
    max_examples=1000,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much],
)
settings.load_profile("thorough")

# wall-clock seconds spent computing each cached grid or oracle
TIMINGS: dict[tuple, float] = {}


@functools.lru_cache(maxsize=None)
def cached_grid(problem: str, solver: str, res: int):
    start = time.perf_counter()
    grid = sample_grid(builtin_problem(problem), solver, nx=res, ny=res)
    TIMINGS[(problem, solver, res)] = time.perf_counter() - start
    return grid


@functools.lru_cache(maxsize=None)
def cached_oracle(problem: str, res: int):
    start = time.perf_counter()
    labels = oracle_grid(builtin_problem(problem), nx=res, ny=res)
    TIMINGS[(problem, "oracle", res)] = time.perf_counter() - start
    return labels


@pytest.fixture(scope="session")
def grids():
    return cached_grid


@pytest.fixture(scope="session")
def oracles():
    return cached_oracle


def pytest_collection_modifyitems(items):
    # acceptance runs last so it can reuse grids and property runs from the other suites
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")
