import numpy as np
import pytest

from src.core.config import SolverConfig
from src.core.errors import CyclicFluxError, InfeasibleFluxError, InvalidPathError
from src.discretization.grid import FluxField, Grid, ScalarField, SourceMeasure, divergence
from src.experiments.dipoles import Dipole, dipole_source
from src.transport.beckmann import Problem, primal_energy, solve
from src.transport.cost import CostKind, CostModel
from src.transport.lagrangian import (
    Path, PathMeasure, cancel_cycles, decompose, equilibrium_check, is_acyclic,
    traffic_intensity, wardrop_energy,
)


@pytest.fixture
def circulation():
    """Unit flow around the 2x2 square: 0 -> 2 -> 3 -> 1 -> 0."""
    grid = Grid((2, 2), 1.0)
    return FluxField(grid, [1.0, -1.0, -1.0, 1.0])


def test_path_measure_validation():
    grid = Grid((2, 2), 1.0)
    with pytest.raises(InvalidPathError):
        PathMeasure(grid, (Path((0, 3), 1.0),))
    with pytest.raises(InvalidPathError):
        PathMeasure(grid, (Path((0, 1, 0), 1.0),))
    with pytest.raises(InvalidPathError):
        PathMeasure(grid, (Path((0, 1), 0.0),))
    with pytest.raises(InvalidPathError):
        PathMeasure(grid, (Path((0,), 1.0),))


def test_path_measure_accepts_tuples():
    grid = Grid((3,), 1.0)
    paths = PathMeasure(grid, (([0, 1, 2], 0.5), ([2, 1], 0.25)))
    assert paths.total_mass == pytest.approx(0.75)
    assert paths.paths[0] == Path((0, 1, 2), 0.5)
    assert paths.boundary().tolist() == [-0.5, 0.25, 0.25]


def test_line_fixture_decomposes_into_one_path(line_fixture):
    flux, _, _ = solve(line_fixture)
    paths = decompose(flux, line_fixture.source)
    assert len(paths) == 1
    assert paths.paths[0].nodes == (0, 1, 2)
    assert paths.paths[0].weight == pytest.approx(1.0, abs=1e-9)


def test_square_fixture_decomposition_order(square_fixture):
    flux = FluxField(square_fixture.grid, [0.5, 0.5, 0.5, 0.5])
    paths = decompose(flux, square_fixture.source)
    assert [p.nodes for p in paths] == [(0, 2, 3), (0, 1, 3)]
    assert [p.weight for p in paths] == [0.5, 0.5]


def test_empty_source_gives_empty_measure():
    grid = Grid((3, 3), 1.0)
    paths = decompose(FluxField.zeros(grid), SourceMeasure.zeros(grid))
    assert len(paths) == 0
    assert paths.total_mass == 0.0


def test_cycle_detected_with_witness(circulation):
    acyclic, cycle = is_acyclic(circulation)
    assert not acyclic
    assert sorted(cycle) == [0, 1, 2, 3]
    with pytest.raises(CyclicFluxError) as info:
        decompose(circulation, SourceMeasure.zeros(circulation.grid))
    assert sorted(info.value.cycle) == [0, 1, 2, 3]


def test_cancel_cycles_removes_pure_circulation(circulation):
    cleaned = cancel_cycles(circulation)
    assert cleaned.max_abs == 0.0
    assert is_acyclic(cleaned)[0]


def test_cancel_cycles_keeps_transport_part(square_fixture):
    # even split plus a circulation of 0.7 around 0 -> 2 -> 3 -> 1 -> 0
    flux = FluxField(square_fixture.grid, [1.2, -0.2, -0.2, 1.2])
    cleaned = cancel_cycles(flux)
    np.testing.assert_allclose(cleaned.values, [1.0, 0.0, 0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(divergence(cleaned).values, square_fixture.source.values)
    assert is_acyclic(cleaned)[0]
    assert np.all(np.abs(cleaned.values) <= np.abs(flux.values))


def test_decompose_rejects_infeasible_flux(line_fixture):
    with pytest.raises(InfeasibleFluxError):
        decompose(FluxField(line_fixture.grid, [1.0, 0.5]), line_fixture.source)


@pytest.mark.parametrize("seed", range(40))
def test_cancel_cycles_monotone(seed):
    rng = np.random.default_rng(seed)
    grid = Grid((4, 4), 1.0)
    flux = FluxField(grid, rng.normal(size=grid.edge_count))
    eps = 1e-10 * flux.max_abs
    cleaned = cancel_cycles(flux, eps)

    assert is_acyclic(cleaned, eps)[0]
    assert np.all(np.abs(cleaned.values) <= np.abs(flux.values) + 1e-12)
    np.testing.assert_allclose(divergence(cleaned).values, divergence(flux).values, atol=1e-10)


@pytest.mark.parametrize("seed", range(30))
@pytest.mark.parametrize("delta", [0.0, 0.5])
def test_reconstruction_from_optimal_flux(seed, delta, make_problem):
    rng = np.random.default_rng(seed)
    p = float(rng.choice([1.5, 2.0, 3.0]))
    problem = make_problem(5, seed, p=p, delta=delta)
    flux, _, report = solve(problem)
    flux = cancel_cycles(flux)
    paths = decompose(flux, problem.source)
    intensity = traffic_intensity(paths)

    scale = flux.max_abs
    assert np.max(np.abs(intensity.vector - flux.values)) <= 1e-9 * scale
    assert np.max(np.abs(paths.boundary() - problem.source.values)) <= 1e-9 * (1.0 + scale)
    assert np.max(np.abs(intensity.scalar - np.abs(flux.values))) <= 1e-9 * scale
    assert paths.total_mass == pytest.approx(problem.source.mass, rel=1e-9)

    energy = wardrop_energy(paths, problem.cost)
    assert abs(energy - primal_energy(problem, flux)) <= 1e-9 * (1.0 + report.primal_energy)


def test_single_dipole_decomposes_into_unit_mass():
    grid = Grid((32, 32), 1.0 / 32)
    source = dipole_source(grid, Dipole((0.375, 0.5), (0.625, 0.5)))
    problem = Problem(grid, source, CostModel(CostKind.POWER, p=1.5))
    flux, _, report = solve(problem)
    assert report.converged

    flux = cancel_cycles(flux)
    paths = decompose(flux, source)
    assert paths.total_mass == pytest.approx(1.0, abs=1e-9)
    assert np.max(np.abs(paths.boundary() - source.values)) <= 1e-9
    assert np.max(np.abs(traffic_intensity(paths).vector - flux.values)) <= 1e-9 * flux.max_abs


def branch_flux():
    """Unit flow 0 -> 1 -> 3 on the 2x2 square plus a faint branch 0 -> 2 that mostly stops at 2."""
    grid = Grid((2, 2), 1.0)
    main = 1.0 - 1.5e-9
    return FluxField(grid, [1.5e-9, main, main, 0.9e-9]), SourceMeasure(grid, [-1.0, 0.0, 0.0, 1.0])


def test_dead_end_branch_is_pruned():
    flux, source = branch_flux()
    config = SolverConfig()
    config.zero_flux_ratio = 1e-9
    paths = decompose(flux, source, config=config)
    assert [path.nodes for path in paths.paths] == [(0, 1, 3)]
    assert paths.paths[0].weight == pytest.approx(1.0, abs=1e-8)


def test_faint_flow_above_the_snap_level_is_traced():
    flux, source = branch_flux()
    paths = decompose(flux, source)
    assert [path.nodes for path in paths.paths] == [(0, 2, 3), (0, 1, 3)]
    assert paths.paths[0].weight == pytest.approx(0.9e-9, rel=1e-6)
    assert paths.total_mass == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_optimal_flux_is_acyclic(seed, p, make_problem):
    problem = make_problem(6, seed, p=p)
    flux, _, _ = solve(problem)
    acyclic, cycle = is_acyclic(flux, 1e-10 * flux.max_abs)
    assert acyclic, cycle


def test_intensities_of_opposite_paths():
    grid = Grid((2,), 1.0)
    paths = PathMeasure(grid, (Path((0, 1), 1.0), Path((1, 0), 1.0)))
    intensity = traffic_intensity(paths)
    assert intensity.scalar.tolist() == [2.0]
    assert intensity.vector.tolist() == [0.0]
    assert wardrop_energy(paths, CostModel(CostKind.POWER, p=2.0)) == pytest.approx(2.0)


def test_equilibrium_on_square_fixture(square_fixture):
    flux, potential, _ = solve(square_fixture)
    paths = decompose(flux, square_fixture.source)
    report = equilibrium_check(paths, potential, square_fixture.cost)
    assert report.ok
    assert report.checked_paths == 2
    assert report.max_length_mismatch <= 1e-6


def test_equilibrium_detects_uneven_split(square_fixture):
    grid = square_fixture.grid
    paths = PathMeasure(grid, (Path((0, 2, 3), 0.8), Path((0, 1, 3), 0.2)))
    potential = ScalarField(grid, [-0.5, 0.0, 0.0, 0.5])
    report = equilibrium_check(paths, potential, square_fixture.cost)
    assert not report.ok
    kinds = {(v.path_index, v.kind) for v in report.violations}
    assert (0, "length_mismatch") in kinds
    assert (0, "cheaper_route") in kinds
    assert (1, "length_mismatch") in kinds
    assert report.max_length_mismatch == pytest.approx(0.6)


@pytest.mark.parametrize("seed", range(5))
def test_equilibrium_on_random_instances(seed, make_problem):
    problem = make_problem(16, seed, p=2.0)
    flux, potential, _ = solve(problem)
    paths = decompose(cancel_cycles(flux), problem.source)
    report = equilibrium_check(paths, potential, problem.cost, tol=1e-6)
    assert report.ok, report.violations[:3]


@pytest.mark.slow
@pytest.mark.parametrize("p", [1.3, 1.5, 2.0, 3.0])
@pytest.mark.parametrize("delta", [0.0, 0.5])
def test_paths_reproduce_energy_on_32_grid(p, delta, make_problem):
    for seed in range(20):
        problem = make_problem(32, seed, p=p, delta=delta)
        flux, _, report = solve(problem)
        acyclic, cycle = is_acyclic(flux, 1e-10 * flux.max_abs)
        assert acyclic, (seed, cycle)

        paths = decompose(cancel_cycles(flux), problem.source)
        energy = wardrop_energy(paths, problem.cost)
        assert abs(energy - report.primal_energy) <= 1e-9 * (1.0 + report.primal_energy), seed
