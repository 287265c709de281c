import numpy as np
import pytest

from src.core.errors import GeometryError, GridMismatchError, InvalidPathError, SourceBalanceError
from src.discretization.grid import (
    FluxField, Grid, ScalarField, SourceMeasure, divergence, divergence_residual, gradient,
)


def test_counts_and_measures():
    grid = Grid((3, 4), 0.5)
    assert grid.ndim == 2
    assert grid.node_count == 12
    assert grid.edge_count == 2 * 4 + 3 * 3
    assert grid.lengths == (1.5, 2.0)
    assert grid.cell_volume == pytest.approx(0.25)
    assert grid.face_area == pytest.approx(0.5)


@pytest.mark.parametrize("dims", [(), (2, 2, 2, 2), (0, 3), (3, -1)])
def test_invalid_dims_rejected(dims):
    with pytest.raises(GeometryError):
        Grid(dims, 1.0)


@pytest.mark.parametrize("spacing", [0.0, -1.0, float("inf")])
def test_invalid_spacing_rejected(spacing):
    with pytest.raises(GeometryError):
        Grid((3,), spacing)


def test_single_cell_has_no_edges():
    grid = Grid((1, 1), 1.0)
    assert grid.edge_count == 0
    assert divergence(FluxField.zeros(grid)).values.tolist() == [0.0]


def test_canonical_edge_order_on_square():
    grid = Grid((2, 2), 1.0)
    assert grid.tails.tolist() == [0, 1, 0, 2]
    assert grid.heads.tolist() == [2, 3, 1, 3]
    assert grid.edge_axes.tolist() == [0, 0, 1, 1]
    assert grid.edge_index(0, 2) == 0
    assert grid.edge_index(3, 1) == 1
    assert grid.edge_index(0, 1) == 2
    assert grid.edge_index(2, 3) == 3


@pytest.mark.parametrize("u, v", [(0, 3), (1, 2), (0, 0), (0, 7)])
def test_edge_index_rejects_non_neighbours(u, v):
    with pytest.raises(InvalidPathError):
        Grid((2, 2), 1.0).edge_index(u, v)


def test_every_edge_round_trips_through_edge_index():
    grid = Grid((3, 2, 4), 1.0)
    for edge in range(grid.edge_count):
        assert grid.edge_index(grid.tails[edge], grid.heads[edge]) == edge


def test_divergence_is_net_inflow():
    grid = Grid((3,), 1.0)
    flux = FluxField(grid, [1.0, 1.0])
    assert divergence(flux).values.tolist() == [-1.0, 0.0, 1.0]


def test_gradient_divides_by_spacing():
    grid = Grid((3,), 0.5)
    potential = ScalarField(grid, [0.0, 1.0, 3.0])
    assert gradient(potential).tolist() == [2.0, 4.0]


def test_positions_are_cell_centers():
    grid = Grid((2, 3), 0.5)
    assert grid.node_positions[grid.node_index((1, 2))] == pytest.approx([0.75, 1.25])
    edge = grid.edge_index(grid.node_index((0, 1)), grid.node_index((1, 1)))
    assert grid.edge_midpoints[edge] == pytest.approx([0.5, 0.75])


def test_locate():
    grid = Grid((4,), 0.25)
    assert grid.locate((0.1,)) == 0
    assert grid.locate((0.5,)) == 2
    assert grid.locate((1.0,)) == 3
    with pytest.raises(GeometryError):
        grid.locate((1.1,))
    with pytest.raises(GeometryError):
        grid.locate((0.5, 0.5))


@pytest.mark.parametrize("seed", range(25))
def test_discrete_integration_by_parts(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in rng.integers(1, 6, size=int(rng.integers(1, 4))))
    grid = Grid(dims, float(rng.uniform(0.1, 2.0)))
    flux = FluxField(grid, rng.normal(size=grid.edge_count))
    phi = rng.normal(size=grid.node_count)

    lhs = float(np.dot(divergence(flux).values, phi))
    scale = 1.0 + float(np.sum(np.abs(flux.values))) * float(np.max(np.abs(phi)))
    assert abs(lhs - grid.pair(flux, phi)) <= 1e-12 * scale


@pytest.mark.parametrize("seed", range(10))
def test_divergence_of_any_flux_sums_to_zero(seed):
    rng = np.random.default_rng(seed)
    grid = Grid((4, 3, 2), 1.0)
    flux = FluxField(grid, rng.normal(size=grid.edge_count))
    assert abs(np.sum(divergence(flux).values)) <= 1e-12 * grid.edge_count


def test_source_balance():
    grid = Grid((3,), 1.0)
    with pytest.raises(SourceBalanceError):
        SourceMeasure(grid, [1.0, 0.0, 0.0])
    source = SourceMeasure(grid, [-2.0, 0.5, 1.5])
    assert source.mass == pytest.approx(2.0)
    assert source.total_variation == pytest.approx(4.0)
    assert source.positive.tolist() == [0.0, 0.5, 1.5]
    assert source.negative.tolist() == [2.0, 0.0, 0.0]
    assert SourceMeasure.zeros(grid).is_zero()


def test_source_pairing_matches_flux_pairing(line_fixture):
    phi = np.array([0.3, -1.0, 2.0])
    flux = FluxField(line_fixture.grid, [1.0, 1.0])
    assert line_fixture.source.pair(phi) == pytest.approx(line_fixture.grid.pair(flux, phi))


def test_fields_are_read_only():
    grid = Grid((3,), 1.0)
    flux = FluxField(grid, [1.0, 2.0])
    with pytest.raises(ValueError):
        flux.values[0] = 5.0


def test_field_length_checked():
    grid = Grid((3,), 1.0)
    with pytest.raises(GridMismatchError):
        FluxField(grid, [1.0, 2.0, 3.0])
    with pytest.raises(GridMismatchError):
        ScalarField(grid, [1.0])


def test_grid_mismatch():
    flux = FluxField.zeros(Grid((3,), 1.0))
    source = SourceMeasure.zeros(Grid((3,), 0.5))
    with pytest.raises(GridMismatchError):
        divergence_residual(flux, source)


def test_divergence_residual_names_worst_node(line_fixture):
    flux = FluxField(line_fixture.grid, [1.0, 0.5])
    residual, node = divergence_residual(flux, line_fixture.source)
    assert residual == pytest.approx(0.5)
    assert node in (1, 2)
