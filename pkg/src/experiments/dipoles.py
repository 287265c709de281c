"""
Dipole experiments for the congestion toolkit.

A dipole moves a unit of mass from a point a to a point b. Its dual norm
is finite in the continuum exactly when p < N / (N - 1), and then scales
like |a - b|^((N - p(N - 1)) / p). This module provides:

    - the dipole datum snapped to the grid;
    - the explicit double-cone field that realizes a dipole, rasterized onto
      grid faces;
    - the separation and refinement sweep that measures the scaling exponent
      and exhibits the membership threshold;
    - clouds of disjoint dipoles whose path mass grows linearly while the
      flux norm stays summable.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares

from src.core.config import SolverConfig
from src.core.errors import GeometryError
from src.core.solve_clock import SolveClock
from src.discretization.grid import FluxField, Grid, SourceMeasure
from src.transport.beckmann import Problem, solve, sobolev_norms
from src.transport.cost import CostKind, CostModel
from src.transport.lagrangian import cancel_cycles, decompose

logger = logging.getLogger("congestion.experiments")

# Volume of the unit ball in R^k, indexed by k = N - 1.
UNIT_BALL_VOLUME = {0: 1.0, 1: 2.0, 2: math.pi}


def critical_exponent(N: int) -> float:
    """N / (N - 1), infinite in one dimension."""
    return math.inf if N == 1 else N / (N - 1.0)


def is_subcritical(N: int, p: float) -> bool:
    """True when point dipoles have finite dual norm, p < N / (N - 1)."""
    return p < critical_exponent(N)


def scaling_exponent(N: int, p: float) -> float:
    """Exponent of |a - b| in the p-th power of the dipole norm."""
    return N - p * (N - 1)


@dataclass(frozen=True)
class Dipole:
    """
    Unit transport from a to b.

    Attributes:
        a: Start point (the negative mass).
        b: End point (the positive mass).
        mass: Transported mass.
    """
    a: Tuple[float, ...]
    b: Tuple[float, ...]
    mass: float = 1.0

    def __post_init__(self):
        a = tuple(float(x) for x in self.a)
        b = tuple(float(x) for x in self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if len(a) != len(b):
            raise GeometryError(f"Dipole endpoints {a} and {b} differ in dimension")
        if a == b:
            raise GeometryError(f"Dipole endpoints coincide at {a}")
        if not self.mass > 0.0:
            raise GeometryError(f"Dipole mass must be positive, got {self.mass}")

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.array(self.a) + np.array(self.b))

    @property
    def separation(self) -> float:
        return float(np.linalg.norm(np.array(self.b) - np.array(self.a)))

    @property
    def tau(self) -> float:
        """Half separation, the height of each cone."""
        return 0.5 * self.separation

    @property
    def direction(self) -> np.ndarray:
        return (np.array(self.b) - np.array(self.a)) / self.separation

    def check_inside(self, grid: Grid) -> None:
        lengths = np.array(grid.lengths)
        for point in (self.a, self.b):
            x = np.array(point)
            if x.shape != lengths.shape or np.any(x <= 0.0) or np.any(x >= lengths):
                raise GeometryError(f"Dipole point {point} is not strictly inside the box")


def cones_disjoint(first: Dipole, second: Dipole) -> bool:
    """
    Sufficient test that two double cones do not meet.

    Each double cone lies in the ball of radius tau around its midpoint.
    """
    distance = float(np.linalg.norm(first.midpoint - second.midpoint))
    return distance > first.tau + second.tau


def snap_dipole(grid: Grid, dipole: Dipole) -> Dipole:
    """
    Move both endpoints to the centers of the cells containing them.

    Raises:
        GeometryError: If both endpoints land in the same cell.
    """
    dipole.check_inside(grid)
    ia, ib = grid.locate(dipole.a), grid.locate(dipole.b)
    if ia == ib:
        raise GeometryError(f"Dipole endpoints {dipole.a} and {dipole.b} snap to the same node {ia}")
    positions = grid.node_positions
    return Dipole(tuple(positions[ia]), tuple(positions[ib]), dipole.mass)


def dipole_source(grid: Grid, dipole: Dipole) -> SourceMeasure:
    """
    Datum of a dipole: -mass at the node of a, +mass at the node of b.

    Raises:
        GeometryError: If a and b snap to the same node or lie outside the box.
    """
    dipole.check_inside(grid)
    ia, ib = grid.locate(dipole.a), grid.locate(dipole.b)
    if ia == ib:
        raise GeometryError(f"Dipole endpoints {dipole.a} and {dipole.b} snap to the same node {ia}")
    values = np.zeros(grid.node_count)
    values[ia] = -dipole.mass
    values[ib] = dipole.mass
    return SourceMeasure(grid, values)


def cone_half_extents(dipole: Dipole) -> np.ndarray:
    """Half-width of the double cone along each coordinate axis."""
    u = dipole.direction
    if len(u) == 1:
        return np.array([dipole.tau])
    rim = np.sqrt(np.maximum(1.0 - u ** 2, 0.0))
    return dipole.tau * np.maximum(np.abs(u), rim)


def check_cone_inside(grid: Grid, dipole: Dipole) -> None:
    """
    Raises:
        GeometryError: If the double cone around the dipole leaves the box.
    """
    extents = cone_half_extents(dipole)
    middle = dipole.midpoint
    lengths = np.array(grid.lengths)
    if np.any(middle - extents < 0.0) or np.any(middle + extents > lengths):
        raise GeometryError(f"Double cone of dipole {dipole.a} -> {dipole.b} exits the box")


def cone_field(points: np.ndarray, dipole: Dipole) -> np.ndarray:
    """
    Evaluate the double-cone vector field of a dipole at points.

    In the frame where the dipole runs along the first axis from -tau to tau,
    the field is (x - a) / (s + tau)^N on the cone around a and
    (b - x) / (tau - s)^N on the cone around b, where s is the coordinate
    along the dipole; it vanishes elsewhere. It is normalized so that the
    flux through every cross-section equals the dipole mass.

    Args:
        points: Array of shape (M, N).
        dipole: The dipole.

    Returns:
        np.ndarray: Field values, shape (M, N).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    N = points.shape[1]
    a, b = np.array(dipole.a), np.array(dipole.b)
    tau, u = dipole.tau, dipole.direction

    relative = points - dipole.midpoint
    s = relative @ u
    r = np.linalg.norm(relative - np.outer(s, u), axis=1)

    near_a = (r <= tau) & (s <= 0.0) & (s >= r - tau)
    near_b = (r <= tau) & (s > 0.0) & (s <= tau - r)

    field_values = np.zeros_like(points)
    with np.errstate(divide="ignore", invalid="ignore"):
        from_a = (points - a) / ((s + tau) ** N)[:, None]
        into_b = (b - points) / ((tau - s) ** N)[:, None]
    field_values[near_a] = from_a[near_a]
    field_values[near_b] = into_b[near_b]
    field_values[~np.isfinite(field_values)] = 0.0
    return field_values * (dipole.mass / UNIT_BALL_VOLUME[N - 1])


def sample_Vab(grid: Grid, dipole: Dipole) -> FluxField:
    """
    Rasterize the double-cone field of a dipole onto the grid faces.

    Endpoints are first snapped to cell centers, so the sampled flux leaves
    exactly the dipole mass through the faces of the cell of a. Each face
    carries the normal component at its center times the face area.

    Raises:
        GeometryError: If the double cone leaves the box.
    """
    snapped = snap_dipole(grid, dipole)
    check_cone_inside(grid, snapped)
    values = cone_field(grid.edge_midpoints, snapped)
    normal = values[np.arange(grid.edge_count), grid.edge_axes]
    return FluxField(grid, grid.face_area * normal)


def weak_divergence_error(grid: Grid, dipole: Dipole,
                          phi: Callable[[np.ndarray], np.ndarray]) -> float:
    """
    |sum_i divergence(f)_i phi(x_i) - (phi(b) - phi(a))| for the sampled field.

    Args:
        grid: Grid to sample on.
        dipole: Dipole whose field is sampled.
        phi: Test function mapping an (M, N) point array to M values.
    """
    snapped = snap_dipole(grid, dipole)
    flux = sample_Vab(grid, dipole)
    phi_nodes = np.asarray(phi(grid.node_positions), dtype=float)
    paired = float(np.dot(grid.divergence_values(flux.values), phi_nodes))
    ends = np.asarray(phi(np.array([snapped.a, snapped.b])), dtype=float)
    expected = snapped.mass * float(ends[1] - ends[0])
    return abs(paired - expected)


def centered_dipole(N: int, separation: float, length: float = 1.0) -> Dipole:
    """Dipole of the given separation along the first axis, centered in [0, length]^N."""
    center = np.full(N, 0.5 * length)
    offset = np.zeros(N)
    offset[0] = 0.5 * separation
    return Dipole(tuple(center - offset), tuple(center + offset))


@dataclass(frozen=True)
class ScalingRow:
    """
    One solve of the scaling sweep.

    Attributes:
        separation: Requested separation.
        snapped_separation: Distance between the snapped endpoints.
        cells: Resolution, in cells per length.
        spacing: Cell width.
        norm: Dual norm of the dipole.
        norm_p: norm ** p.
        converged: Solver convergence flag.
        box_cells: Cells per axis of the Neumann box.
    """
    separation: float
    snapped_separation: float
    cells: int
    spacing: float
    norm: float
    norm_p: float
    converged: bool
    box_cells: int = 0


@dataclass
class ScalingResult:
    """
    Outcome of scaling_experiment.

    Attributes:
        N: Dimension.
        p: Exponent.
        expected_slope: N - p(N - 1).
        subcritical: Whether p < N / (N - 1).
        rows: All solves.
        slope: Fitted exponent of norm^p against separation at the finest
            resolution, with a separation-independent offset; None when the
            fit is degenerate.
        raw_slope: Plain log-log slope of the same rows.
        flag: Empty, or the reason the slope is missing or unreliable.
    """
    N: int
    p: float
    expected_slope: float
    subcritical: bool
    rows: List[ScalingRow] = field(default_factory=list)
    slope: Optional[float] = None
    flag: str = ""
    raw_slope: Optional[float] = None

    def refinement_norms(self, separation: float) -> List[float]:
        """Norms at one separation, ordered from coarse to fine."""
        rows = sorted((r for r in self.rows if r.separation == separation), key=lambda r: r.cells)
        return [r.norm for r in rows]

    def increases_under_refinement(self, separation: float, min_ratio: float = 1.0) -> bool:
        norms = self.refinement_norms(separation)
        return all(later > min_ratio * earlier for earlier, later in zip(norms, norms[1:]))

    def differences_shrink(self, separation: float) -> bool:
        differences = np.abs(np.diff(self.refinement_norms(separation)))
        return bool(np.all(np.diff(differences) < 0.0))


def fit_slope(separations: Sequence[float], values: Sequence[float], points: int = 3,
              offset: bool = True) -> Tuple[Optional[float], str]:
    """
    Power-law exponent of values against separations on the smallest
    separations.

    With three or more distinct separations the model is
    values ~ A * s^a + B, where B absorbs the separation-independent energy
    the grid assigns to each point mass at a fixed resolution. With two
    separations, or offset=False, the slope is the plain least-squares slope
    of log(values) against log(separations).

    Returns:
        (slope, flag); slope is None and flag explains why when the fit is
        degenerate.
    """
    pairs = sorted(zip(separations, values))[:points]
    if len({s for s, _ in pairs}) < 2:
        return None, "fewer than two separations, no slope"
    xs = np.array([s for s, _ in pairs])
    ys = np.array([v for _, v in pairs])
    if np.any(ys <= 0.0) or not np.all(np.isfinite(ys)):
        return None, "non-positive or non-finite norms, no slope"
    slope, intercept = (float(c) for c in np.polyfit(np.log(xs), np.log(ys), 1))
    if not offset or len(set(xs.tolist())) < 3:
        return slope, ""

    def residuals(params: np.ndarray) -> np.ndarray:
        amplitude, exponent, background = params
        return amplitude * xs ** exponent + background - ys

    fit = least_squares(residuals, (math.exp(intercept), slope, 0.0), method="lm",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    exponent = float(fit.x[1])
    if not fit.success or not math.isfinite(exponent):
        return slope, "offset fit failed, plain log-log slope"
    return exponent, ""


def scaling_experiment(N: int, p: float, separations: Sequence[float],
                       grid_resolutions: Sequence[int], config: Optional[SolverConfig] = None,
                       length: float = 1.0, box_factor: float = 8.0) -> ScalingResult:
    """
    Measure the dipole norm over separations and refinements.

    A resolution is a cell count per length, so the spacing is
    length / cells. The Neumann box has side max(length, box_factor * largest
    separation), rounded up to whole cells, and the dipole sits at its
    center along the first axis. Every separation is solved in the same box
    with the pure power cost. The slope is fitted at the finest resolution on
    the three smallest separations; raw_slope is the plain log-log slope of
    the same rows.

    Raises:
        GeometryError: If a dipole does not fit a grid.
    """
    if N not in (1, 2, 3):
        raise GeometryError(f"Dimension must be 1, 2 or 3, got {N}")
    if any(s <= 0.0 for s in separations):
        raise GeometryError(f"Separations must be positive, got {list(separations)}")
    result = ScalingResult(N, p, scaling_exponent(N, p), is_subcritical(N, p))
    side = max([length] + [box_factor * s for s in separations])
    clock = SolveClock()
    for separation in separations:
        for cells in sorted(grid_resolutions):
            spacing = length / cells
            box_cells = int(math.ceil(side / spacing - 1e-9))
            grid = Grid((box_cells,) * N, spacing)
            dipole = centered_dipole(N, separation, box_cells * spacing)
            snapped = snap_dipole(grid, dipole)
            with clock.phase("solve"):
                norms = sobolev_norms(dipole_source(grid, dipole), p, config=config)
            row = ScalingRow(
                separation=float(separation),
                snapped_separation=snapped.separation,
                cells=int(cells),
                spacing=grid.spacing,
                norm=norms.min_flux,
                norm_p=norms.min_flux ** p,
                converged=norms.solve_report.converged,
                box_cells=box_cells,
            )
            result.rows.append(row)
            logger.info(f"N={N} p={p} s={separation:g} cells={cells} box={box_cells}: "
                        f"norm={row.norm:.6g}")

    finest = max(grid_resolutions)
    finest_rows = [r for r in result.rows if r.cells == finest]
    seps = [r.snapped_separation for r in finest_rows]
    norms_p = [r.norm_p for r in finest_rows]
    result.slope, result.flag = fit_slope(seps, norms_p)
    result.raw_slope, _ = fit_slope(seps, norms_p, offset=False)
    if result.flag:
        logger.warning(f"Scaling fit flagged: {result.flag}")
    logger.info(f"Scaling sweep finished ({clock.summary()})")
    return result


def place_dipole_cloud(grid: Grid, count: int, base_separation: float,
                       decay: float) -> List[Dipole]:
    """
    Place count dipoles with shrinking separations and disjoint cones.

    Dipole i runs along the first axis with separation
    base_separation * decay**i rounded to whole cells (at least one).
    Dipoles are packed left to right in rows along the second axis, with
    endpoints on cell centers; further axes sit at the middle cell.

    Raises:
        GeometryError: If the dipoles do not fit in the box.
    """
    if count < 1:
        raise GeometryError("A dipole cloud needs at least one dipole")
    h = grid.spacing
    dims = grid.dims
    sizes = [max(1, int(round(base_separation * decay ** i / h))) for i in range(count)]

    def center(index: int) -> float:
        return (index + 0.5) * h

    def vertical_fits(row: int, size: int, axis: int) -> bool:
        return row + 0.5 - 0.5 * size >= 0.0 and row + 0.5 + 0.5 * size <= dims[axis]

    row = int(math.ceil(0.5 * sizes[0] + 0.5)) if grid.ndim > 1 else 0
    row_size = sizes[0]
    column = 1
    dipoles = []
    for size in sizes:
        if column + size > dims[0] - 2:
            if grid.ndim == 1:
                raise GeometryError("Dipole cloud does not fit in the interval")
            row += int(math.ceil(0.5 * row_size)) + int(math.ceil(0.5 * size)) + 2
            row_size = size
            column = 1
            if column + size > dims[0] - 2:
                raise GeometryError("Dipole cloud does not fit in the box")
        a = [center(column)]
        b = [center(column + size)]
        if grid.ndim > 1:
            if not vertical_fits(row, size, 1):
                raise GeometryError("Dipole cloud does not fit in the box")
            a.append(center(row))
            b.append(center(row))
        if grid.ndim > 2:
            middle = dims[2] // 2
            if not vertical_fits(middle, size, 2):
                raise GeometryError("Dipole cloud does not fit in the box")
            a.append(center(middle))
            b.append(center(middle))
        dipoles.append(Dipole(tuple(a), tuple(b)))
        column += size + 2

    validate_cloud(grid, dipoles)
    return dipoles


def validate_cloud(grid: Grid, dipoles: Sequence[Dipole]) -> None:
    """
    Raises:
        GeometryError: If a cone leaves the box or two cones may overlap.
    """
    for dipole in dipoles:
        check_cone_inside(grid, dipole)
    for i, first in enumerate(dipoles):
        for second in dipoles[i + 1:]:
            if not cones_disjoint(first, second):
                raise GeometryError(f"Cones of dipoles {first.a}->{first.b} and "
                                    f"{second.a}->{second.b} overlap")


@dataclass
class CloudReport:
    """
    Outcome of dipole_cloud.

    Attributes:
        dipoles: Placed dipoles.
        source: Summed datum.
        path_mass: Total weight of the decomposed path measure.
        path_count: Number of decomposed paths.
        norm_p: p-th power of the optimal flux norm.
        separations: Dipole separations.
        converged: Solver convergence flag.
    """
    dipoles: List[Dipole]
    source: SourceMeasure
    path_mass: float
    path_count: int
    norm_p: float
    separations: List[float]
    converged: bool


def cloud_source(grid: Grid, dipoles: Sequence[Dipole]) -> SourceMeasure:
    values = np.zeros(grid.node_count)
    for dipole in dipoles:
        values += dipole_source(grid, dipole).values
    return SourceMeasure(grid, values)


def _solve_cloud(grid: Grid, dipoles: Sequence[Dipole], p: float,
                 config: Optional[SolverConfig]) -> CloudReport:
    source = cloud_source(grid, dipoles)
    problem = Problem(grid, source, CostModel(CostKind.POWER, p=p))
    flux, _, report = solve(problem, config=config)
    paths = decompose(cancel_cycles(flux), source, config=config)
    return CloudReport(
        dipoles=list(dipoles),
        source=source,
        path_mass=paths.total_mass,
        path_count=len(paths),
        norm_p=p * report.primal_energy,
        separations=[d.separation for d in dipoles],
        converged=report.converged,
    )


def dipole_cloud(grid: Grid, count: int, base_separation: float = 0.25, decay: float = 0.5,
                 p: float = 1.2, config: Optional[SolverConfig] = None) -> CloudReport:
    """
    Solve and decompose a cloud of count disjoint dipoles.

    Raises:
        GeometryError: If the cones cannot be placed disjointly.
    """
    dipoles = place_dipole_cloud(grid, count, base_separation, decay)
    return _solve_cloud(grid, dipoles, p, config)


@dataclass
class CloudSweep:
    """
    Nested dipole clouds of growing size.

    Attributes:
        counts: Cloud sizes, increasing.
        reports: One CloudReport per count.
        exponent: N - p(N - 1).
        constant: max over separations of norm^p(single dipole) / sep^exponent.
        increments: norm^p(k_j) - norm^p(k_{j-1}); the first entry is norm^p(k_0).
        increment_bounds: slack * constant * sum of sep^exponent over the added dipoles.
    """
    counts: List[int]
    reports: List[CloudReport]
    exponent: float
    constant: float
    increments: List[float]
    increment_bounds: List[float]

    @property
    def mass_ratios(self) -> List[float]:
        """Path mass ratio per count ratio; 1.0 means exactly linear."""
        ratios = []
        for (k0, r0), (k1, r1) in zip(zip(self.counts, self.reports),
                                      zip(self.counts[1:], self.reports[1:])):
            ratios.append((r1.path_mass / r0.path_mass) / (k1 / k0))
        return ratios

    @property
    def increments_bounded(self) -> bool:
        return all(inc <= bound for inc, bound in zip(self.increments, self.increment_bounds))


def cloud_sweep(grid: Grid, counts: Sequence[int], base_separation: float = 0.25,
                decay: float = 0.5, p: float = 1.2, config: Optional[SolverConfig] = None,
                slack: float = 1.5) -> CloudSweep:
    """
    Run nested dipole clouds and compare norm increments with the summable
    sequence constant * sep^(N - p(N - 1)).

    The constant is calibrated from single centered dipoles, one per
    distinct separation in the largest cloud.
    """
    counts = sorted(int(k) for k in counts)
    dipoles = place_dipole_cloud(grid, counts[-1], base_separation, decay)
    exponent = scaling_exponent(grid.ndim, p)

    constant = 0.0
    middle = np.array([(n // 2 + 0.5) * grid.spacing for n in grid.dims])
    for cells in sorted({int(round(d.separation / grid.spacing)) for d in dipoles}):
        start = middle.copy()
        start[0] -= (cells // 2) * grid.spacing
        end = start.copy()
        end[0] += cells * grid.spacing
        single = Dipole(tuple(start), tuple(end))
        norm = sobolev_norms(dipole_source(grid, single), p, config=config).min_flux
        constant = max(constant, norm ** p / single.separation ** exponent)

    reports, increments, bounds = [], [], []
    previous_count, previous_norm_p = 0, 0.0
    for count in counts:
        report = _solve_cloud(grid, dipoles[:count], p, config)
        reports.append(report)
        added = sum(d.separation ** exponent for d in dipoles[previous_count:count])
        increments.append(report.norm_p - previous_norm_p)
        bounds.append(slack * constant * added)
        logger.info(f"Cloud k={count}: path mass {report.path_mass:.6g}, "
                    f"norm^p {report.norm_p:.6g}")
        previous_count, previous_norm_p = count, report.norm_p

    return CloudSweep(counts, reports, exponent, constant, increments, bounds)
