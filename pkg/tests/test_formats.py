import json

import numpy as np
import pytest

from src.core.errors import ProblemFileError
from src.discretization.grid import Grid
from src.experiments.dipoles import scaling_experiment
from src.formats.files import (
    parse_problem, read_paths, read_problem, read_solution, write_dipole_table, write_paths,
    write_problem, write_solution,
)
from src.transport.beckmann import Problem, solve
from src.transport.cost import CostKind, CostModel
from src.transport.lagrangian import decompose


def problem_document(**changes):
    data = {
        "grid": {"dims": [3], "spacing": 1.0},
        "cost": {"kind": "power", "p": 2.0},
        "source": [-1.0, 0.0, 1.0],
    }
    for key, value in changes.items():
        data[key] = value
    return data


def test_problem_round_trip(tmp_path, make_source):
    grid = Grid((4, 3), 0.25)
    weights = np.linspace(0.5, 1.5, grid.edge_count)
    cost = CostModel(CostKind.POWER_DELTA, p=1.7, alpha=0.3, delta=0.1, weights=weights)
    problem = Problem(grid, make_source(grid, 2), cost)

    first = tmp_path / "problem.json"
    write_problem(str(first), problem)
    loaded = read_problem(str(first))

    assert loaded.grid == grid
    assert loaded.cost.kind is CostKind.POWER_DELTA
    assert (loaded.cost.p, loaded.cost.alpha, loaded.cost.delta) == (1.7, 0.3, 0.1)
    np.testing.assert_array_equal(loaded.cost.weights, weights)
    np.testing.assert_array_equal(loaded.source.values, problem.source.values)

    second = tmp_path / "again.json"
    write_problem(str(second), loaded)
    assert first.read_bytes() == second.read_bytes()


def test_defaults_for_optional_cost_fields():
    problem = parse_problem(problem_document())
    assert problem.cost.alpha == 1.0
    assert problem.cost.delta == 0.0
    assert problem.cost.weights is None


@pytest.mark.parametrize("changes, key_path", [
    ({"grid": {"dims": [], "spacing": 1.0}}, "grid.dims"),
    ({"grid": {"dims": [3, 0], "spacing": 1.0}}, "grid.dims[1]"),
    ({"grid": {"dims": [3], "spacing": -1.0}}, "grid.spacing"),
    ({"grid": {"spacing": 1.0}}, "grid.dims"),
    ({"cost": {"kind": "power", "p": 1.0}}, "cost.p"),
    ({"cost": {"kind": "linear", "p": 2.0}}, "cost.kind"),
    ({"cost": {"kind": "power", "p": "two"}}, "cost.p"),
    ({"cost": {"kind": "power", "p": 2.0, "weights": [1.0]}}, "cost.weights"),
    ({"cost": {"kind": "power_delta", "p": 2.0, "delta": -1.0}}, "cost"),
    ({"source": [-1.0, 1.0]}, "source"),
    ({"source": [-1.0, 0.0, 1.1]}, "source"),
    ({"source": [-1.0, None, 1.0]}, "source[1]"),
])
def test_schema_errors_name_the_key(changes, key_path):
    with pytest.raises(ProblemFileError) as info:
        parse_problem(problem_document(**changes))
    assert info.value.key_path == key_path


def test_missing_section():
    data = problem_document()
    del data["cost"]
    with pytest.raises(ProblemFileError) as info:
        parse_problem(data)
    assert info.value.key_path == "cost"


def test_unreadable_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ProblemFileError) as info:
        read_problem(str(path))
    assert info.value.key_path == "$"
    with pytest.raises(ProblemFileError):
        read_problem(str(tmp_path / "missing.json"))


def test_solution_round_trip(tmp_path, square_fixture):
    flux, potential, report = solve(square_fixture)
    path = tmp_path / "solution.json"
    write_solution(str(path), flux, potential, report)

    loaded_flux, loaded_potential, loaded_report = read_solution(str(path))
    np.testing.assert_array_equal(loaded_flux.values, flux.values)
    np.testing.assert_array_equal(loaded_potential.values, potential.values)
    assert loaded_report["converged"] is True
    assert loaded_report["primal_energy"] == report.primal_energy


def test_solution_grid_must_match_problem(tmp_path, square_fixture):
    flux, potential, report = solve(square_fixture)
    path = tmp_path / "solution.json"
    write_solution(str(path), flux, potential, report)
    with pytest.raises(ProblemFileError) as info:
        read_solution(str(path), Grid((4,), 1.0))
    assert info.value.key_path == "grid"


def test_solution_missing_report_key(tmp_path, square_fixture):
    flux, potential, report = solve(square_fixture)
    path = tmp_path / "solution.json"
    write_solution(str(path), flux, potential, report)
    data = json.loads(path.read_text())
    del data["report"]["gap"]
    path.write_text(json.dumps(data))
    with pytest.raises(ProblemFileError) as info:
        read_solution(str(path))
    assert info.value.key_path == "report.gap"


def test_paths_round_trip(tmp_path, square_fixture):
    flux, _, _ = solve(square_fixture)
    paths = decompose(flux, square_fixture.source)
    path = tmp_path / "paths.json"
    write_paths(str(path), paths, square_fixture.cost)

    data = json.loads(path.read_text())
    assert [entry["nodes"] for entry in data["paths"]] == [[0, 2, 3], [0, 1, 3]]
    assert len(data["intensity"]) == square_fixture.grid.edge_count
    assert data["wardrop_energy"] == pytest.approx(0.5, abs=1e-8)

    loaded = read_paths(str(path), square_fixture.grid)
    assert loaded.paths == paths.paths


def test_paths_file_rejects_broken_chain(tmp_path):
    path = tmp_path / "paths.json"
    path.write_text(json.dumps({"paths": [{"nodes": [0, 3], "weight": 1.0}]}))
    with pytest.raises(ProblemFileError) as info:
        read_paths(str(path), Grid((2, 2), 1.0))
    assert info.value.key_path == "paths"


def test_dipole_table(tmp_path):
    result = scaling_experiment(1, 1.5, [0.25, 0.125], [16])
    path = tmp_path / "dipoles.csv"
    write_dipole_table(str(path), result)

    table = np.loadtxt(str(path), delimiter=",", ndmin=2)
    assert table.shape == (2, 7)
    assert sorted(table[:, 0].tolist()) == [0.125, 0.25]
    assert np.all(table[:, 6] == 1.0)
    lines = path.read_text().splitlines()
    assert lines[0] == "# N=1 p=1.5 subcritical=True"
    assert lines[-1].startswith("# expected_slope=1 slope=")


def test_dipole_table_records_missing_slope(tmp_path):
    result = scaling_experiment(1, 1.5, [0.25], [16])
    path = tmp_path / "dipoles.csv"
    write_dipole_table(str(path), result)
    footer = path.read_text().splitlines()[-1]
    assert "slope=none" in footer
    assert "flag=" in footer
