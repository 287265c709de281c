#!/usr/bin/env python3
"""
Fixture generation script.

This script writes the small problem files used by the tests and the
README examples: a three-cell line, a 2x2 square and a random 16x16 grid.
"""
import argparse
import os
import sys

import numpy as np

# Add the project root to the Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.discretization.grid import Grid, SourceMeasure
from src.formats.files import write_problem
from src.transport.beckmann import Problem
from src.transport.cost import CostKind, CostModel


def line_problem() -> Problem:
    grid = Grid((3,), 1.0)
    return Problem(grid, SourceMeasure(grid, [-1.0, 0.0, 1.0]), CostModel(CostKind.POWER, p=2.0))


def square_problem() -> Problem:
    grid = Grid((2, 2), 1.0)
    return Problem(grid, SourceMeasure(grid, [-1.0, 0.0, 0.0, 1.0]), CostModel(CostKind.POWER, p=2.0))


def random_problem(cells: int = 16, seed: int = 0, p: float = 1.5, delta: float = 0.0) -> Problem:
    """Zero-sum random source on the unit square."""
    rng = np.random.default_rng(seed)
    grid = Grid((cells, cells), 1.0 / cells)
    values = rng.normal(size=grid.node_count)
    values -= np.mean(values)
    kind = CostKind.POWER_DELTA if delta > 0.0 else CostKind.POWER
    return Problem(grid, SourceMeasure(grid, values, balance_tolerance=1e-9),
                   CostModel(kind, p=p, delta=delta))


def main():
    """Generate and save all fixture problems."""
    parser = argparse.ArgumentParser(description="Write fixture problem files.")
    parser.add_argument("directory", nargs="?", default="fixtures")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    os.makedirs(args.directory, exist_ok=True)
    fixtures = {
        "line.json": line_problem(),
        "square.json": square_problem(),
        "random16.json": random_problem(seed=args.seed),
    }
    for name, problem in fixtures.items():
        write_problem(os.path.join(args.directory, name), problem)
        print(f"Wrote {name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
