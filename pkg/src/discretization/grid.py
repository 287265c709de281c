"""
Grid module for the congestion toolkit.

This module provides the regular box grid used by every solver, together
with the fields that live on it: node scalars, edge fluxes and zero-sum
source measures.

Conventions:
    - nodes are cells, numbered row-major (last axis fastest);
    - edges are interior faces, listed axis by axis, each axis row-major
      over the tail cell; every edge points from its lower to its higher
      node index;
    - divergence is net inflow, so a flux realizing a source t satisfies
      divergence(f) = t and mass moves from negative to positive nodes.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sps

from src.core.errors import GeometryError, GridMismatchError, InvalidPathError, SourceBalanceError

MAX_DIMENSION = 3


@dataclass(frozen=True)
class Grid:
    """
    Regular grid graph discretizing the box [0, dims_1 h] x ... x [0, dims_N h].

    No edge crosses the boundary, so the no-flux (Neumann) condition holds
    structurally.

    Attributes:
        dims: Number of cells per axis.
        spacing: Uniform cell width h.
    """
    dims: Tuple[int, ...]
    spacing: float = 1.0

    def __post_init__(self):
        dims = tuple(int(d) for d in np.atleast_1d(self.dims))
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", float(self.spacing))

        if not 1 <= len(dims) <= MAX_DIMENSION:
            raise GeometryError(f"Grid dimension must be 1..{MAX_DIMENSION}, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise GeometryError(f"Cells per axis must be positive, got {dims}")
        if not np.isfinite(self.spacing) or self.spacing <= 0.0:
            raise GeometryError(f"Grid spacing must be positive, got {self.spacing}")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.dims))

    @property
    def edge_count(self) -> int:
        return int(sum(self._axis_edge_counts))

    @property
    def lengths(self) -> Tuple[float, ...]:
        """Side lengths of the box."""
        return tuple(d * self.spacing for d in self.dims)

    @property
    def cell_volume(self) -> float:
        """h^N, the quadrature weight of a node or an edge."""
        return self.spacing ** self.ndim

    @property
    def face_area(self) -> float:
        """h^(N-1), converts edge flux to flux density."""
        return self.spacing ** (self.ndim - 1)

    @cached_property
    def _axis_shapes(self) -> List[Tuple[int, ...]]:
        shapes = []
        for axis in range(self.ndim):
            shape = list(self.dims)
            shape[axis] -= 1
            shapes.append(tuple(shape))
        return shapes

    @cached_property
    def _axis_edge_counts(self) -> List[int]:
        return [int(np.prod(shape)) for shape in self._axis_shapes]

    @cached_property
    def axis_offsets(self) -> np.ndarray:
        """First edge index of each axis block."""
        return np.concatenate([[0], np.cumsum(self._axis_edge_counts)]).astype(np.int64)

    @cached_property
    def strides(self) -> Tuple[int, ...]:
        """Node index increment per unit step along each axis."""
        return tuple(int(np.prod(self.dims[k + 1:])) for k in range(self.ndim))

    @cached_property
    def _edge_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        tails, heads, axes = [], [], []
        for axis, shape in enumerate(self._axis_shapes):
            if 0 in shape:
                continue
            multi = np.indices(shape).reshape(self.ndim, -1)
            tail = np.ravel_multi_index(multi, self.dims)
            tails.append(tail)
            heads.append(tail + self.strides[axis])
            axes.append(np.full(tail.shape, axis))
        if not tails:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty
        arrays = (np.concatenate(tails), np.concatenate(heads), np.concatenate(axes))
        for array in arrays:
            array.setflags(write=False)
        return arrays

    @property
    def tails(self) -> np.ndarray:
        return self._edge_arrays[0]

    @property
    def heads(self) -> np.ndarray:
        return self._edge_arrays[1]

    @property
    def edge_axes(self) -> np.ndarray:
        return self._edge_arrays[2]

    @cached_property
    def incidence(self) -> sps.csr_matrix:
        """
        Node-by-edge incidence matrix B with +1 at the head and -1 at the tail.

        B @ f is the divergence (net inflow) and B.T @ v the edge difference
        v_head - v_tail.
        """
        edges = np.arange(self.edge_count)
        rows = np.concatenate([self.heads, self.tails])
        cols = np.concatenate([edges, edges])
        data = np.concatenate([np.ones(self.edge_count), -np.ones(self.edge_count)])
        matrix = sps.csr_matrix((data, (rows, cols)), shape=(self.node_count, self.edge_count))
        matrix.sort_indices()
        return matrix

    @cached_property
    def laplacian(self) -> sps.csr_matrix:
        """Unweighted graph Laplacian B B^T."""
        return (self.incidence @ self.incidence.T).tocsr()

    def weighted_laplacian(self, weights: np.ndarray) -> sps.csr_matrix:
        """
        Return B diag(weights) B^T.

        Args:
            weights: One nonnegative weight per edge.
        """
        return (self.incidence @ sps.diags(weights) @ self.incidence.T).tocsr()

    @cached_property
    def node_edges(self) -> List[np.ndarray]:
        """Incident edge indices of every node, in increasing edge order."""
        matrix = self.incidence
        return [matrix.indices[matrix.indptr[i]:matrix.indptr[i + 1]]
                for i in range(self.node_count)]

    @cached_property
    def node_positions(self) -> np.ndarray:
        """Cell centers, shape (node_count, N)."""
        multi = np.indices(self.dims).reshape(self.ndim, -1).T
        return (multi + 0.5) * self.spacing

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        """Face centers, shape (edge_count, N)."""
        midpoints = self.node_positions[self.tails].copy()
        midpoints[np.arange(self.edge_count), self.edge_axes] += 0.5 * self.spacing
        return midpoints

    def multi_index(self, node: int) -> Tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(int(node), self.dims))

    def node_index(self, multi_index: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(i) for i in multi_index), self.dims))

    def edge_index(self, u: int, v: int) -> int:
        """
        Return the index of the edge joining nodes u and v (in either order).

        Raises:
            InvalidPathError: If u and v are not axis-adjacent.
        """
        lo, hi = (int(u), int(v)) if u < v else (int(v), int(u))
        if lo < 0 or hi >= self.node_count or lo == hi:
            raise InvalidPathError(f"Nodes {u} and {v} are not adjacent")
        mu = np.array(self.multi_index(lo))
        step = np.array(self.multi_index(hi)) - mu
        axes = np.flatnonzero(step)
        if len(axes) != 1 or step[axes[0]] != 1:
            raise InvalidPathError(f"Nodes {u} and {v} are not adjacent")
        axis = int(axes[0])
        local = np.ravel_multi_index(tuple(mu), self._axis_shapes[axis])
        return int(self.axis_offsets[axis] + local)

    def locate(self, point: Sequence[float]) -> int:
        """
        Return the node whose cell contains the point.

        Points on a cell boundary belong to the upper cell, except on the
        far boundary of the box.

        Raises:
            GeometryError: If the point lies outside the box or has the
                wrong dimension.
        """
        x = np.asarray(point, dtype=float)
        if x.shape != (self.ndim,):
            raise GeometryError(f"Point {tuple(x)} does not have dimension {self.ndim}")
        if np.any(x < 0.0) or np.any(x > np.array(self.lengths)):
            raise GeometryError(f"Point {tuple(x)} lies outside the box {self.lengths}")
        cells = np.floor(x / self.spacing).astype(int)
        cells = np.minimum(cells, np.array(self.dims) - 1)
        return self.node_index(cells)

    def check_same(self, other: "Grid") -> None:
        if other != self:
            raise GridMismatchError(f"Grid {other} does not match {self}")

    # Raw array operators, used by the solvers on hot paths.

    def divergence_values(self, flux_values: np.ndarray) -> np.ndarray:
        return self.incidence @ flux_values

    def gradient_values(self, potential_values: np.ndarray) -> np.ndarray:
        return (potential_values[self.heads] - potential_values[self.tails]) / self.spacing

    def divergence(self, flux: "FluxField") -> "ScalarField":
        """
        Net inflow of a flux at every node.

        Args:
            flux: Flux on this grid.

        Returns:
            ScalarField: d_i = (inflow through heads at i) - (outflow through tails at i).
        """
        self.check_same(flux.grid)
        return ScalarField(self, self.divergence_values(flux.values))

    def gradient(self, potential: "ScalarField") -> np.ndarray:
        """
        Edge gradient g_e = (v_head - v_tail) / h.

        Args:
            potential: Node field on this grid.

        Returns:
            np.ndarray: One value per edge.
        """
        self.check_same(potential.grid)
        return self.gradient_values(potential.values)

    def pair(self, flux: "FluxField", phi: np.ndarray) -> float:
        """
        Weak pairing sum_e f_e (phi_head - phi_tail).

        For a flux realizing a source t this equals sum_i t_i phi_i.
        """
        self.check_same(flux.grid)
        phi = np.asarray(phi, dtype=float)
        return float(np.dot(flux.values, phi[self.heads] - phi[self.tails]))


def _frozen_vector(values, length: int, what: str) -> np.ndarray:
    array = np.array(values, dtype=float).reshape(-1)
    if array.shape != (length,):
        raise GridMismatchError(f"{what} needs {length} values, got {array.size}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One real value per node."""
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values",
                           _frozen_vector(self.values, self.grid.node_count, "ScalarField"))

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.node_count))


@dataclass(frozen=True, eq=False)
class FluxField:
    """
    One signed value per edge: the mass crossing the face per unit time.

    The continuum density is values / h^(N-1).
    """
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values",
                           _frozen_vector(self.values, self.grid.edge_count, "FluxField"))

    @classmethod
    def zeros(cls, grid: Grid) -> "FluxField":
        return cls(grid, np.zeros(grid.edge_count))

    @property
    def density(self) -> np.ndarray:
        return self.values / self.grid.face_area

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass(frozen=True, eq=False)
class SourceMeasure:
    """
    Zero-sum node masses t_i representing the transport datum.

    Attributes:
        grid: Grid the masses live on.
        values: Mass per node; negative entries are supply, positive demand.
        balance_tolerance: Allowed |sum t| relative to sum |t|.
    """
    grid: Grid
    values: np.ndarray
    balance_tolerance: float = 1e-12

    def __post_init__(self):
        values = _frozen_vector(self.values, self.grid.node_count, "SourceMeasure")
        object.__setattr__(self, "values", values)
        imbalance = abs(float(np.sum(values)))
        scale = float(np.sum(np.abs(values)))
        if scale > 0.0 and imbalance > self.balance_tolerance * scale:
            raise SourceBalanceError(
                f"source must sum to zero: sum = {imbalance:.3e}, sum|t| = {scale:.3e}"
            )

    @classmethod
    def zeros(cls, grid: Grid) -> "SourceMeasure":
        return cls(grid, np.zeros(grid.node_count))

    @property
    def positive(self) -> np.ndarray:
        """T+ = max(t, 0)."""
        return np.maximum(self.values, 0.0)

    @property
    def negative(self) -> np.ndarray:
        """T- = max(-t, 0)."""
        return np.maximum(-self.values, 0.0)

    @property
    def mass(self) -> float:
        """Total transported mass, sum T+."""
        return float(np.sum(self.positive))

    @property
    def total_variation(self) -> float:
        return float(np.sum(np.abs(self.values)))

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def scaled(self, factor: float) -> "SourceMeasure":
        return SourceMeasure(self.grid, factor * self.values, self.balance_tolerance)

    def pair(self, phi: np.ndarray) -> float:
        """<t, phi> = sum_i t_i phi_i."""
        return float(np.dot(self.values, np.asarray(phi, dtype=float)))


def divergence(flux: FluxField) -> ScalarField:
    """Net inflow of a flux; see Grid.divergence."""
    return flux.grid.divergence(flux)


def gradient(potential: ScalarField) -> np.ndarray:
    """Edge gradient of a potential; see Grid.gradient."""
    return potential.grid.gradient(potential)


def divergence_residual(flux: FluxField, source: SourceMeasure) -> Tuple[float, Optional[int]]:
    """
    Return max_i |divergence(f)_i - t_i| and the node where it is attained.

    The node is None on an empty grid.
    """
    flux.grid.check_same(source.grid)
    residual = np.abs(flux.grid.divergence_values(flux.values) - source.values)
    if residual.size == 0:
        return 0.0, None
    node = int(np.argmax(residual))
    return float(residual[node]), node
