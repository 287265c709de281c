"""
File formats of the congestion toolkit.

Three JSON documents travel between commands:

    problem:   {"grid": {"dims", "spacing"}, "cost": {"kind", "p", "alpha",
               "delta", "weights"?}, "source": [...]}
    solution:  {"grid": {...}, "flux": [...], "potential": [...], "report": {...}}
    paths:     {"paths": [{"nodes", "weight"}], "intensity": [...],
               "vector_intensity": [...], "wardrop_energy": x}

Node arrays are row-major with the last axis fastest; edge arrays hold all
axis-0 edges first, then axis-1 edges, and so on. Floats are written with
their shortest round-trip representation, so reading a written file gives
back the same values and repeated runs write identical bytes.

The dipole sweep is written as a comma-separated table with '#' comment
lines carrying the fitted slope.
"""
import json
import logging
import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.core.errors import CongestionError, ProblemFileError
from src.discretization.grid import FluxField, Grid, ScalarField, SourceMeasure
from src.experiments.dipoles import ScalingResult
from src.transport.beckmann import Problem, SolveReport
from src.transport.cost import CostKind, CostModel
from src.transport.lagrangian import Path, PathMeasure, traffic_intensity, wardrop_energy

logger = logging.getLogger("congestion.formats")

SOURCE_BALANCE_TOLERANCE = 1e-9
REPORT_KEYS = ("primal_energy", "dual_energy", "gap", "divergence_residual",
               "iterations", "converged")
TABLE_COLUMNS = ("separation", "snapped_separation", "cells", "spacing",
                 "norm", "norm_p", "converged")


def _load_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except IOError as e:
        raise ProblemFileError("$", f"cannot read {path}: {e}")
    except json.JSONDecodeError as e:
        raise ProblemFileError("$", f"{path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ProblemFileError("$", "top level must be an object")
    return data


def _dump_json(path: str, data: Dict[str, Any]) -> None:
    with open(path, 'w') as f:
        json.dump(data, f, indent=2)
        f.write("\n")


def _require(data: Dict[str, Any], key: str, key_path: str) -> Any:
    if key not in data:
        raise ProblemFileError(key_path, "missing")
    return data[key]


def _number(value: Any, key_path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProblemFileError(key_path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ProblemFileError(key_path, f"expected a finite number, got {value!r}")
    return float(value)


def _vector(value: Any, length: int, key_path: str) -> np.ndarray:
    if not isinstance(value, list):
        raise ProblemFileError(key_path, "expected an array")
    if len(value) != length:
        raise ProblemFileError(key_path, f"expected {length} entries, got {len(value)}")
    return np.array([_number(x, f"{key_path}[{i}]") for i, x in enumerate(value)])


def _floats(values: np.ndarray) -> List[float]:
    return [float(x) for x in values]


def parse_grid(data: Any, key_path: str = "grid") -> Grid:
    if not isinstance(data, dict):
        raise ProblemFileError(key_path, "expected an object")
    dims = _require(data, "dims", f"{key_path}.dims")
    if not isinstance(dims, list) or not 1 <= len(dims) <= 3:
        raise ProblemFileError(f"{key_path}.dims", "expected 1 to 3 cell counts")
    for i, d in enumerate(dims):
        if isinstance(d, bool) or not isinstance(d, int) or d < 1:
            raise ProblemFileError(f"{key_path}.dims[{i}]", f"expected a positive integer, got {d!r}")
    spacing = _number(_require(data, "spacing", f"{key_path}.spacing"), f"{key_path}.spacing")
    if spacing <= 0.0:
        raise ProblemFileError(f"{key_path}.spacing", f"must be positive, got {spacing}")
    return Grid(tuple(dims), spacing)


def grid_to_dict(grid: Grid) -> Dict[str, Any]:
    return {"dims": list(grid.dims), "spacing": grid.spacing}


def parse_cost(data: Any, grid: Grid, key_path: str = "cost") -> CostModel:
    if not isinstance(data, dict):
        raise ProblemFileError(key_path, "expected an object")
    kind = _require(data, "kind", f"{key_path}.kind")
    if kind not in [k.value for k in CostKind]:
        raise ProblemFileError(f"{key_path}.kind", f"expected 'power' or 'power_delta', got {kind!r}")
    p = _number(_require(data, "p", f"{key_path}.p"), f"{key_path}.p")
    if p <= 1.0:
        raise ProblemFileError(f"{key_path}.p", f"must satisfy p > 1, got {p}")
    alpha = _number(data.get("alpha", 1.0), f"{key_path}.alpha")
    delta = _number(data.get("delta", 0.0), f"{key_path}.delta")
    weights = data.get("weights")
    if weights is not None:
        weights = _vector(weights, grid.edge_count, f"{key_path}.weights")
    try:
        return CostModel(CostKind(kind), p=p, alpha=alpha, delta=delta, weights=weights)
    except CongestionError as e:
        raise ProblemFileError(key_path, str(e))


def cost_to_dict(cost: CostModel) -> Dict[str, Any]:
    data = {"kind": cost.kind.value, "p": cost.p, "alpha": cost.alpha, "delta": cost.delta}
    if cost.weights is not None:
        data["weights"] = _floats(cost.weights)
    return data


def parse_problem(data: Dict[str, Any]) -> Problem:
    """
    Build a Problem from a decoded problem document.

    Raises:
        ProblemFileError: With the key path of the first schema violation;
            a source that does not sum to zero within 1e-9 * sum|t| is
            reported under "source".
    """
    grid = parse_grid(_require(data, "grid", "grid"))
    cost = parse_cost(_require(data, "cost", "cost"), grid)
    values = _vector(_require(data, "source", "source"), grid.node_count, "source")
    imbalance = abs(float(np.sum(values)))
    scale = float(np.sum(np.abs(values)))
    if imbalance > SOURCE_BALANCE_TOLERANCE * scale:
        raise ProblemFileError("source", f"must sum to zero, sums to {float(np.sum(values)):.6g}")
    source = SourceMeasure(grid, values, balance_tolerance=SOURCE_BALANCE_TOLERANCE)
    return Problem(grid, source, cost)


def problem_to_dict(problem: Problem) -> Dict[str, Any]:
    return {
        "grid": grid_to_dict(problem.grid),
        "cost": cost_to_dict(problem.cost),
        "source": _floats(problem.source.values),
    }


def read_problem(path: str) -> Problem:
    problem = parse_problem(_load_json(path))
    logger.debug(f"Read problem {path}: grid {problem.grid.dims}, cost {problem.cost.kind.value}")
    return problem


def write_problem(path: str, problem: Problem) -> None:
    _dump_json(path, problem_to_dict(problem))


def write_solution(path: str, flux: FluxField, potential: ScalarField, report: SolveReport) -> None:
    """Write a solution document; the grid is stored alongside the arrays."""
    flux.grid.check_same(potential.grid)
    summary = report.to_dict()
    data = {
        "grid": grid_to_dict(flux.grid),
        "flux": _floats(flux.values),
        "potential": _floats(potential.values),
        "report": {key: summary[key] for key in REPORT_KEYS},
    }
    _dump_json(path, data)


def read_solution(path: str, grid: Optional[Grid] = None) -> Tuple[FluxField, ScalarField, Dict[str, Any]]:
    """
    Read a solution document.

    Args:
        path: File to read.
        grid: Expected grid; taken from the file when None.

    Returns:
        Tuple of flux, potential and the report dictionary.
    """
    data = _load_json(path)
    stored = parse_grid(data["grid"]) if "grid" in data else None
    if grid is None:
        if stored is None:
            raise ProblemFileError("grid", "missing and no problem grid given")
        grid = stored
    elif stored is not None and stored != grid:
        raise ProblemFileError("grid", f"solution grid {stored.dims} does not match problem grid {grid.dims}")
    flux = FluxField(grid, _vector(_require(data, "flux", "flux"), grid.edge_count, "flux"))
    potential = ScalarField(grid, _vector(_require(data, "potential", "potential"),
                                          grid.node_count, "potential"))
    report = _require(data, "report", "report")
    if not isinstance(report, dict):
        raise ProblemFileError("report", "expected an object")
    for key in REPORT_KEYS:
        _require(report, key, f"report.{key}")
    return flux, potential, report


def write_paths(path: str, paths: PathMeasure, cost: CostModel) -> None:
    intensity = traffic_intensity(paths)
    data = {
        "paths": [{"nodes": list(p.nodes), "weight": p.weight} for p in paths],
        "intensity": _floats(intensity.scalar),
        "vector_intensity": _floats(intensity.vector),
        "wardrop_energy": wardrop_energy(paths, cost),
    }
    _dump_json(path, data)


def read_paths(path: str, grid: Grid) -> PathMeasure:
    data = _load_json(path)
    entries = _require(data, "paths", "paths")
    if not isinstance(entries, list):
        raise ProblemFileError("paths", "expected an array")
    paths = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ProblemFileError(f"paths[{i}]", "expected an object")
        nodes = _require(entry, "nodes", f"paths[{i}].nodes")
        weight = _number(_require(entry, "weight", f"paths[{i}].weight"), f"paths[{i}].weight")
        if not isinstance(nodes, list) or not all(isinstance(n, int) for n in nodes):
            raise ProblemFileError(f"paths[{i}].nodes", "expected an array of node indices")
        paths.append(Path(tuple(nodes), weight))
    try:
        return PathMeasure(grid, tuple(paths))
    except CongestionError as e:
        raise ProblemFileError("paths", str(e))


def write_dipole_table(path: str, result: ScalingResult) -> None:
    """
    Write the scaling sweep as a comma-separated table.

    One row per solve with the columns of TABLE_COLUMNS; '#' lines record
    the dimension, exponent, expected and fitted slope.
    """
    rows = np.array([[r.separation, r.snapped_separation, r.cells, r.spacing,
                      r.norm, r.norm_p, float(r.converged)] for r in result.rows], dtype=float)
    rows = rows.reshape(-1, len(TABLE_COLUMNS))
    header = "\n".join([
        f"N={result.N} p={result.p:g} subcritical={result.subcritical}",
        ",".join(TABLE_COLUMNS),
    ])
    slope = "none" if result.slope is None else f"{result.slope:.17g}"
    footer = f"expected_slope={result.expected_slope:.17g} slope={slope}"
    if result.raw_slope is not None:
        footer += f" raw_slope={result.raw_slope:.17g}"
    if result.flag:
        footer += f" flag={result.flag}"
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=header, footer=footer, comments="# ")
