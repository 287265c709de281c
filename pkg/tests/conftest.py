import logging

import numpy as np
import pytest

from src.discretization.grid import Grid, SourceMeasure
from src.transport.beckmann import Problem
from src.transport.cost import CostKind, CostModel


@pytest.fixture(autouse=True)
def reset_congestion_logger():
    yield
    logger = logging.getLogger("congestion")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)


@pytest.fixture
def line_fixture():
    """Three cells of width 1 moving one unit from the first to the last."""
    grid = Grid((3,), 1.0)
    return Problem(grid, SourceMeasure(grid, [-1.0, 0.0, 1.0]), CostModel(CostKind.POWER, p=2.0))


@pytest.fixture
def square_fixture():
    """2x2 cells moving one unit between opposite corners."""
    grid = Grid((2, 2), 1.0)
    return Problem(grid, SourceMeasure(grid, [-1.0, 0.0, 0.0, 1.0]), CostModel(CostKind.POWER, p=2.0))


@pytest.fixture
def make_source():
    """Factory for random zero-sum sources."""

    def build(grid, seed, sparsity=0.0):
        rng = np.random.default_rng(seed)
        values = rng.normal(size=grid.node_count)
        if sparsity > 0.0:
            values[rng.random(grid.node_count) < sparsity] = 0.0
        values -= np.mean(values)
        return SourceMeasure(grid, values, balance_tolerance=1e-9)

    return build


@pytest.fixture
def make_problem(make_source):
    """Factory for random problems on a unit square grid."""

    def build(cells, seed, p=2.0, delta=0.0):
        grid = Grid((cells, cells), 1.0 / cells)
        kind = CostKind.POWER_DELTA if delta > 0.0 else CostKind.POWER
        return Problem(grid, make_source(grid, seed), CostModel(kind, p=p, delta=delta))

    return build
