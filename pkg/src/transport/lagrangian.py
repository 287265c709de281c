"""
Lagrangian module for the congestion toolkit.

This module turns fluxes into weighted path collections and back:

    - acyclicity testing and cycle cancellation on the signed edge graph;
    - flow decomposition of an acyclic flux into simple weighted paths whose
      start and end points reproduce the negative and positive parts of the
      source;
    - scalar and vector traffic intensities of a path collection, the
      congestion energy they induce, and a check that every used path is a
      shortest route for the marginal congestion cost.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import networkx as nx
import numpy as np

from src.core.config import SolverConfig
from src.core.errors import CyclicFluxError, InfeasibleFluxError, InvalidPathError, StrandedMassError
from src.discretization.grid import FluxField, Grid, ScalarField, SourceMeasure, divergence_residual
from src.transport.cost import CostModel

logger = logging.getLogger("congestion.lagrangian")

DEFAULT_EPS_RATIO = 1e-10


@dataclass(frozen=True)
class Path:
    """
    A simple node path carrying a positive weight.

    Attributes:
        nodes: Visited nodes, first is the start, last is the end.
        weight: Mass carried along the path.
    """
    nodes: Tuple[int, ...]
    weight: float

    @property
    def start(self) -> int:
        return self.nodes[0]

    @property
    def end(self) -> int:
        return self.nodes[-1]


@dataclass(frozen=True, eq=False)
class PathMeasure:
    """
    Finite weighted collection of simple grid paths.

    Attributes:
        grid: Grid the paths live on.
        paths: The weighted paths.
    """
    grid: Grid
    paths: Tuple[Path, ...] = field(default_factory=tuple)

    def __post_init__(self):
        paths = tuple(p if isinstance(p, Path) else Path(tuple(p[0]), float(p[1]))
                      for p in self.paths)
        for path in paths:
            nodes = tuple(int(n) for n in path.nodes)
            if len(nodes) < 2:
                raise InvalidPathError(f"Path {nodes} needs at least two nodes")
            if len(set(nodes)) != len(nodes):
                raise InvalidPathError(f"Path {nodes} visits a node twice")
            if not np.isfinite(path.weight) or path.weight <= 0.0:
                raise InvalidPathError(f"Path weight must be positive, got {path.weight}")
            for u, v in zip(nodes[:-1], nodes[1:]):
                self.grid.edge_index(u, v)
        object.__setattr__(self, "paths", paths)

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    @cached_property
    def _edge_lists(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        lists = []
        for path in self.paths:
            edges = np.array([self.grid.edge_index(u, v)
                              for u, v in zip(path.nodes[:-1], path.nodes[1:])], dtype=np.int64)
            signs = np.array([1.0 if v > u else -1.0
                              for u, v in zip(path.nodes[:-1], path.nodes[1:])])
            lists.append((edges, signs))
        return lists

    def path_edges(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        """Edge indices of a path and +1/-1 for traversal along/against orientation."""
        return self._edge_lists[index]

    @property
    def total_mass(self) -> float:
        return float(sum(path.weight for path in self.paths))

    def start_measure(self) -> np.ndarray:
        """Pushforward by the start point."""
        measure = np.zeros(self.grid.node_count)
        for path in self.paths:
            measure[path.start] += path.weight
        return measure

    def end_measure(self) -> np.ndarray:
        """Pushforward by the end point."""
        measure = np.zeros(self.grid.node_count)
        for path in self.paths:
            measure[path.end] += path.weight
        return measure

    def boundary(self) -> np.ndarray:
        """(end - start) pushforward; equals the source for a decomposition."""
        return self.end_measure() - self.start_measure()


@dataclass(frozen=True, eq=False)
class IntensityPair:
    """
    Traffic intensities of a path measure.

    Attributes:
        scalar: i_e, total weight of paths crossing edge e.
        vector: iv_e, signed total with traversal direction; |iv_e| <= i_e.
    """
    scalar: np.ndarray
    vector: np.ndarray


def _threshold(flux: FluxField, eps: Optional[float]) -> float:
    if eps is not None:
        return float(eps)
    return DEFAULT_EPS_RATIO * flux.max_abs


def _signed_graph(grid: Grid, values: np.ndarray, eps: float) -> nx.DiGraph:
    """Directed graph of the edges with |f| > eps, oriented along the flow."""
    graph = nx.DiGraph()
    for edge in np.flatnonzero(np.abs(values) > eps):
        tail, head = int(grid.tails[edge]), int(grid.heads[edge])
        if values[edge] > 0.0:
            graph.add_edge(tail, head, edge=int(edge))
        else:
            graph.add_edge(head, tail, edge=int(edge))
    return graph


def _find_cycle(graph: nx.DiGraph) -> Optional[List[Tuple[int, int]]]:
    try:
        return nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        return None


def is_acyclic(flux: FluxField, eps: Optional[float] = None) -> Tuple[bool, Optional[List[int]]]:
    """
    Test whether the above-threshold flow graph has a directed cycle.

    Args:
        flux: Flux to test.
        eps: Absolute threshold; defaults to 1e-10 * max|f|.

    Returns:
        (True, None) when acyclic, otherwise (False, witness cycle as nodes).
    """
    graph = _signed_graph(flux.grid, flux.values, _threshold(flux, eps))
    cycle = _find_cycle(graph)
    if cycle is None:
        return True, None
    return False, [int(u) for u, _ in cycle]


def cancel_cycles(flux: FluxField, eps: Optional[float] = None) -> FluxField:
    """
    Remove circulations until the flux is acyclic.

    Each round subtracts the smallest flow on a directed cycle from every
    edge of the cycle and zeroes the bottleneck edge, so divergence is
    unchanged and |f'_e| <= |f_e| on every edge.
    """
    grid = flux.grid
    threshold = _threshold(flux, eps)
    values = np.array(flux.values, dtype=float)
    graph = _signed_graph(grid, values, threshold)

    rounds = 0
    while True:
        cycle = _find_cycle(graph)
        if cycle is None:
            break
        edges = [graph.edges[u, v]["edge"] for u, v in cycle]
        magnitudes = np.abs(values[edges])
        bottleneck = int(np.argmin(magnitudes))
        amount = float(magnitudes[bottleneck])
        for position, ((u, v), edge) in enumerate(zip(cycle, edges)):
            if position == bottleneck:
                values[edge] = 0.0
            else:
                values[edge] -= amount * np.sign(values[edge])
            if abs(values[edge]) <= threshold:
                graph.remove_edge(u, v)
        rounds += 1

    if rounds:
        logger.info(f"Cancelled {rounds} cycles")
    return FluxField(grid, values)


def decompose(flux: FluxField, source: SourceMeasure, eps: Optional[float] = None,
              tolerance: Optional[float] = None,
              config: Optional[SolverConfig] = None) -> PathMeasure:
    """
    Decompose an acyclic flux into weighted simple paths.

    Supply and demand come from the source. Paths are traced from the
    lowest-index node with remaining supply, always leaving through the
    lowest-index edge that still carries flow in its direction, and end at
    the first node with remaining demand. Each path carries the minimum of
    the remaining supply, remaining demand and residual flow along it.

    Flow below the snap level max(zero_flux_ratio * max|f|, divergence
    residual) counts as zero. A trace that reaches a node with neither
    demand nor outgoing flow prunes the edge it arrived by and starts over.

    Args:
        flux: Acyclic flux realizing the source.
        source: Datum the flux realizes.
        eps: Flux threshold; edges with |f| <= eps are ignored. Defaults to
            1e-10 * max|f|.
        tolerance: Allowed divergence mismatch and leftover mass. Defaults
            to 1e-9 * (1 + max|t|).
        config: Supplies zero_flux_ratio; defaults are used when None.

    Raises:
        CyclicFluxError: If the flux has a directed cycle.
        InfeasibleFluxError: If divergence(flux) differs from the source.
        StrandedMassError: If supply, demand or flow remains that no path
            can explain.
    """
    cfg = config or SolverConfig()
    grid = flux.grid
    grid.check_same(source.grid)
    threshold = _threshold(flux, eps)
    tolerance = 1e-9 * (1.0 + source.max_abs) if tolerance is None else tolerance

    acyclic, cycle = is_acyclic(flux, threshold)
    if not acyclic:
        raise CyclicFluxError(cycle)
    residual, node = divergence_residual(flux, source)
    if node is not None and residual > tolerance + 2 * grid.ndim * threshold:
        raise InfeasibleFluxError(node, residual)

    remaining = np.where(np.abs(flux.values) > threshold, flux.values, 0.0)
    mismatch = float(np.max(np.abs(grid.divergence_values(remaining) - source.values), initial=0.0))
    zero = max(cfg.zero_flux_ratio * flux.max_abs, mismatch, np.finfo(float).tiny)
    supply = np.maximum(-source.values, 0.0)
    demand = np.maximum(source.values, 0.0)
    tails, heads, node_edges = grid.tails, grid.heads, grid.node_edges

    def next_edge(node_id: int) -> Tuple[int, int]:
        for edge in node_edges[node_id]:
            if tails[edge] == node_id and remaining[edge] > zero:
                return int(edge), int(heads[edge])
            if heads[edge] == node_id and remaining[edge] < -zero:
                return int(edge), int(tails[edge])
        return -1, -1

    paths: List[Path] = []
    pruned = 0.0
    for start in np.flatnonzero(supply > zero):
        start = int(start)
        while supply[start] > zero:
            nodes, edges = [start], []
            visited = {start}
            current = start
            while current == start or demand[current] <= zero:
                edge, following = next_edge(current)
                if edge < 0:
                    break
                if following in visited:
                    raise CyclicFluxError(nodes[nodes.index(following):])
                nodes.append(following)
                edges.append(edge)
                visited.add(following)
                current = following

            if not edges:
                if supply[start] > tolerance:
                    raise StrandedMassError(float(supply[start]), start)
                supply[start] = 0.0
                break
            if demand[current] <= zero:
                # dead end: drop the arriving edge and trace again
                pruned += abs(float(remaining[edges[-1]]))
                remaining[edges[-1]] = 0.0
                continue

            carried = np.abs(remaining[edges])
            weight = float(min(supply[start], demand[current], carried.min()))
            for edge in edges:
                remaining[edge] -= weight * np.sign(remaining[edge])
                if abs(remaining[edge]) <= zero:
                    remaining[edge] = 0.0
            supply[start] = 0.0 if supply[start] - weight <= zero else supply[start] - weight
            demand[current] = 0.0 if demand[current] - weight <= zero else demand[current] - weight
            paths.append(Path(tuple(nodes), weight))

    leftover = max(float(np.max(np.abs(remaining), initial=0.0)),
                   float(np.max(demand, initial=0.0)),
                   pruned)
    if leftover > tolerance:
        raise StrandedMassError(leftover)

    if pruned:
        logger.debug(f"Pruned {pruned:.3e} of dead-end flow below the snap level {zero:.3e}")
    logger.debug(f"Decomposed flux into {len(paths)} paths of total mass "
                 f"{sum(p.weight for p in paths):.12g}")
    return PathMeasure(grid, tuple(paths))


def traffic_intensity(paths: PathMeasure) -> IntensityPair:
    """
    Scalar and vector traffic intensity of a path measure.

    Returns:
        IntensityPair with i_e = sum of weights of paths using e and
        iv_e = the same sum signed by traversal direction.
    """
    grid = paths.grid
    scalar = np.zeros(grid.edge_count)
    vector = np.zeros(grid.edge_count)
    for index, path in enumerate(paths.paths):
        edges, signs = paths.path_edges(index)
        np.add.at(scalar, edges, path.weight)
        np.add.at(vector, edges, path.weight * signs)
    return IntensityPair(scalar, vector)


def wardrop_energy(paths: PathMeasure, cost: CostModel, grid: Optional[Grid] = None) -> float:
    """Congestion energy sum_e h^N H(x_e, i_e / h^(N-1)) of a path measure."""
    grid = paths.grid if grid is None else grid
    grid.check_same(paths.grid)
    intensity = traffic_intensity(paths).scalar
    return grid.cell_volume * float(np.sum(cost.eval_H(None, intensity / grid.face_area)))


@dataclass(frozen=True)
class PathViolation:
    """
    One failed equilibrium condition.

    Attributes:
        path_index: Index of the path in the measure.
        kind: "length_mismatch" when the marginal-cost length differs from
            the potential gain, "cheaper_route" when a shorter route exists.
        gain: v(end) - v(start).
        length: Marginal-cost length of the path.
        shortest: Shortest marginal-cost distance between its endpoints.
    """
    path_index: int
    kind: str
    gain: float
    length: float
    shortest: float


@dataclass(frozen=True)
class EquilibriumReport:
    """Outcome of equilibrium_check."""
    checked_paths: int
    max_length_mismatch: float
    violations: List[PathViolation]

    @property
    def ok(self) -> bool:
        return not self.violations


def marginal_edge_costs(paths: PathMeasure, cost: CostModel) -> np.ndarray:
    """h * H'(x_e, i_e / h^(N-1)) per edge; unused edges get the zero-load value."""
    grid = paths.grid
    intensity = traffic_intensity(paths).scalar
    return grid.spacing * np.broadcast_to(
        cost.marginal_cost(None, intensity / grid.face_area), (grid.edge_count,))


def equilibrium_check(paths: PathMeasure, potential: ScalarField, cost: CostModel,
                      tol: float = 1e-6, margin: Optional[float] = None) -> EquilibriumReport:
    """
    Check that used paths are shortest routes priced at marginal cost.

    For every path the potential gain must equal its marginal-cost length
    within tol, and no route between the same endpoints may be shorter by
    more than margin (defaults to tol).
    """
    grid = paths.grid
    grid.check_same(potential.grid)
    margin = tol if margin is None else margin
    weights = marginal_edge_costs(paths, cost)

    network = nx.Graph()
    network.add_nodes_from(range(grid.node_count))
    for edge in range(grid.edge_count):
        network.add_edge(int(grid.tails[edge]), int(grid.heads[edge]), weight=float(weights[edge]))

    distances: Dict[int, Dict[int, float]] = {}
    violations: List[PathViolation] = []
    worst = 0.0
    v = potential.values
    for index, path in enumerate(paths.paths):
        edges, _ = paths.path_edges(index)
        length = float(np.sum(weights[edges]))
        gain = float(v[path.end] - v[path.start])
        if path.start not in distances:
            distances[path.start] = nx.single_source_dijkstra_path_length(
                network, path.start, weight="weight")
        shortest = float(distances[path.start][path.end])

        mismatch = abs(length - gain)
        worst = max(worst, mismatch)
        if mismatch > tol:
            violations.append(PathViolation(index, "length_mismatch", gain, length, shortest))
        if shortest < length - margin:
            violations.append(PathViolation(index, "cheaper_route", gain, length, shortest))

    if violations:
        logger.info(f"Equilibrium check found {len(violations)} violations")
    return EquilibriumReport(len(paths), worst, violations)
