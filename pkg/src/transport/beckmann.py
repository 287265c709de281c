"""
Beckmann module for the congestion toolkit.

This module solves the discrete congested transport problem

    P(f) = sum_e h^N H(x_e, |f_e| / h^(N-1))   subject to   divergence(f) = t

through its unconstrained concave dual

    D(v) = sum_i t_i v_i - sum_e h^N H*(x_e, g_e(v)),   g_e(v) = (v_head - v_tail) / h,

over zero-mean potentials v. The flux is recovered edge by edge from the
optimality condition f_e = h^(N-1) grad_H_star(g_e), then projected onto the
affine set divergence(f) = t by a minimal-norm correction.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.optimize import minimize

from src.core.config import DUAL_METHODS, SolverConfig
from src.core.errors import CostModelError, GridMismatchError, InfeasibleFluxError, SourceBalanceError
from src.core.solve_clock import SolveClock
from src.discretization.grid import FluxField, Grid, ScalarField, SourceMeasure, divergence_residual
from src.transport.cost import CostKind, CostModel

logger = logging.getLogger("congestion.beckmann")

ARMIJO = 1e-4
MAX_BACKTRACKS = 60
STALL_WINDOW = 20
STALL_DECREASE = 1e-13


@dataclass(frozen=True, eq=False)
class Problem:
    """
    A congested transport instance: grid, datum and cost.

    Attributes:
        grid: Discretized box.
        source: Zero-sum datum t.
        cost: Congestion cost; its weights, if any, must have one entry per edge.
    """
    grid: Grid
    source: SourceMeasure
    cost: CostModel

    def __post_init__(self):
        self.grid.check_same(self.source.grid)
        weights = self.cost.weights
        if weights is not None and weights.shape != (self.grid.edge_count,):
            raise GridMismatchError(
                f"cost.weights needs {self.grid.edge_count} entries, got {weights.size}"
            )


@dataclass(frozen=True)
class DualReport:
    """Outcome of solve_dual."""
    dual_energy: float
    iterations: int
    gradient_norm: float
    converged: bool
    method: str


@dataclass(frozen=True)
class SolveReport:
    """
    Outcome of a primal-dual solve.

    Attributes:
        primal_energy: P(f) of the returned feasible flux.
        dual_energy: D(v) of the returned potential.
        gap: primal_energy - dual_energy.
        divergence_residual: max_i |divergence(f)_i - t_i|.
        iterations: Dual iterations, summed over refinements.
        converged: gap <= tolerance * (1 + |P|) and residual <= tolerance.
        method: Dual method that produced the potential.
        gradient_norm: Final sup-norm of the dual gradient.
        elapsed: Wall time in seconds.
        dual_stationary: Whether the dual gradient met its own target.
    """
    primal_energy: float
    dual_energy: float
    gap: float
    divergence_residual: float
    iterations: int
    converged: bool
    method: str = ""
    gradient_norm: float = 0.0
    elapsed: float = 0.0
    dual_stationary: bool = False

    @property
    def relative_gap(self) -> float:
        return self.gap / (1.0 + abs(self.primal_energy))

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


class DualObjective:
    """
    The negated dual F(v) = -D(v) and its derivatives.

    The datum is centered so that F is invariant under constant shifts even
    when t carries construction rounding.
    """

    def __init__(self, problem: Problem):
        self.problem = problem
        self.grid = problem.grid
        self.cost = problem.cost
        self.target = problem.source.values - np.mean(problem.source.values)

    def flux_values(self, v: np.ndarray) -> np.ndarray:
        g = self.grid.gradient_values(v)
        return self.grid.face_area * self.cost.grad_H_star(None, g)

    def value(self, v: np.ndarray) -> float:
        g = self.grid.gradient_values(v)
        conjugate = float(np.sum(self.cost.eval_H_star(None, g)))
        return self.grid.cell_volume * conjugate - float(np.dot(self.target, v))

    def value_and_gradient(self, v: np.ndarray) -> Tuple[float, np.ndarray]:
        gradient = self.grid.divergence_values(self.flux_values(v)) - self.target
        return self.value(v), gradient - np.mean(gradient)

    def hessian(self, v: np.ndarray, floor: float) -> sps.csc_matrix:
        """
        Curvature matrix h^(N-2) B diag(c) B^T with c bounded below by
        floor * max(c), plus a tiny diagonal shift for the constant mode.
        """
        g = self.grid.gradient_values(v)
        excess_floor = 1e-8 * max(1.0, float(np.max(np.abs(g))) if g.size else 1.0)
        c = self.cost.curvature_H_star(None, g, floor=excess_floor)
        c = np.broadcast_to(c, g.shape).astype(float)
        largest = float(np.max(c)) if c.size else 0.0
        if largest <= 0.0:
            c = np.ones_like(g)
        else:
            c = np.maximum(c, floor * largest)
        matrix = self.grid.spacing ** (self.grid.ndim - 2) * self.grid.weighted_laplacian(c)
        shift = 1e-10 * float(matrix.diagonal().max()) if matrix.shape[0] else 0.0
        return (matrix + shift * sps.identity(matrix.shape[0])).tocsc()


def _sup(array: np.ndarray) -> float:
    return float(np.max(np.abs(array))) if array.size else 0.0


def _quasi_newton(objective: DualObjective, v: np.ndarray, gtol: float,
                  max_iters: int, floor: float) -> Tuple[np.ndarray, int, bool]:
    """
    Curvature-matrix Newton iteration with Armijo backtracking.

    Returns the iterate, the iteration count and whether the gradient
    tolerance was met. Returns early, unconverged, when the line search
    cannot make progress or when the objective has dropped by less than
    STALL_DECREASE * (1 + |F|) over the last STALL_WINDOW iterations.
    """
    value, grad = objective.value_and_gradient(v)
    history = [value]
    for iteration in range(max_iters):
        gnorm = _sup(grad)
        if gnorm <= gtol:
            return v, iteration, True
        if len(history) > STALL_WINDOW and \
                history[-STALL_WINDOW - 1] - value <= STALL_DECREASE * (1.0 + abs(value)):
            logger.info(f"Quasi-Newton stalled at iteration {iteration}, gradient {gnorm:.3e}")
            return v, iteration, False

        direction = spla.spsolve(objective.hessian(v, floor), -grad)
        direction -= np.mean(direction)
        slope = float(np.dot(grad, direction))
        if not np.isfinite(slope) or slope >= 0.0:
            direction = -grad
            slope = -float(np.dot(grad, grad))

        roundoff = 1e-13 * (abs(value) + 1.0)
        step = 1.0
        for _ in range(MAX_BACKTRACKS):
            trial = v + step * direction
            trial_value, trial_grad = objective.value_and_gradient(trial)
            decrease = trial_value <= value + ARMIJO * step * slope
            within_roundoff = trial_value <= value + roundoff and _sup(trial_grad) < gnorm
            if np.isfinite(trial_value) and (decrease or within_roundoff):
                break
            step *= 0.5
        else:
            logger.warning(f"Quasi-Newton line search stalled at iteration {iteration}, "
                           f"gradient {gnorm:.3e}")
            return v, iteration, False

        v, value, grad = trial, trial_value, trial_grad
        history.append(value)
        logger.debug(f"quasi-Newton it={iteration} F={value:.12e} |grad|={_sup(grad):.3e} step={step:.2e}")

    return v, max_iters, _sup(grad) <= gtol


def _lbfgs(objective: DualObjective, v: np.ndarray, gtol: float,
           max_iters: int) -> Tuple[np.ndarray, int, bool]:
    """Limited-memory BFGS from scipy on the zero-mean dual."""
    result = minimize(objective.value_and_gradient, v, jac=True, method="L-BFGS-B",
                      options={"maxiter": max_iters, "maxcor": 20, "gtol": gtol, "ftol": 0.0})
    v = result.x - np.mean(result.x)
    _, grad = objective.value_and_gradient(v)
    logger.debug(f"L-BFGS finished: {result.message}")
    return v, int(result.nit), _sup(grad) <= gtol


def _accelerated_gradient(objective: DualObjective, v: np.ndarray, gtol: float,
                          max_iters: int) -> Tuple[np.ndarray, int, bool]:
    """
    Nesterov accelerated gradient with backtracking on the Lipschitz estimate
    and function-value restart.
    """
    lipschitz = 1.0
    theta = 1.0
    x = v
    fx, gx = objective.value_and_gradient(x)
    y, fy, gy = x, fx, gx
    for iteration in range(max_iters):
        if _sup(gx) <= gtol:
            return x, iteration, True

        gy_sq = float(np.dot(gy, gy))
        for _ in range(MAX_BACKTRACKS):
            candidate = y - gy / lipschitz
            f_candidate, g_candidate = objective.value_and_gradient(candidate)
            if f_candidate <= fy - 0.5 * gy_sq / lipschitz + 1e-13 * (abs(fy) + 1.0):
                break
            lipschitz *= 2.0
        else:
            return x, iteration, False

        if f_candidate > fx:
            # restart the momentum from the best point
            theta = 1.0
            y, fy, gy = x, fx, gx
            continue

        theta_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        momentum = (theta - 1.0) / theta_next
        y = candidate + momentum * (candidate - x)
        x, fx, gx = candidate, f_candidate, g_candidate
        fy, gy = objective.value_and_gradient(y)
        theta = theta_next
        lipschitz *= 0.9

    return x, max_iters, _sup(gx) <= gtol


def solve_dual(problem: Problem, tolerance: Optional[float] = None,
               max_iters: Optional[int] = None, config: Optional[SolverConfig] = None,
               initial: Optional[ScalarField] = None) -> Tuple[ScalarField, DualReport]:
    """
    Maximize the dual functional over zero-mean potentials.

    Args:
        problem: Transport instance.
        tolerance: Stationarity target, relative to 1 + max|t|.
        max_iters: Iteration budget shared by the main and fallback methods;
            the main method stops early on a stall and leaves at least
            fallback_share of the budget to the fallback.
        config: Solver settings; defaults are used when None.
        initial: Optional starting potential.

    Returns:
        Tuple of the zero-mean potential and a DualReport. Non-convergence
        is reported with converged=False, never raised.
    """
    cfg = config or SolverConfig()
    tolerance = cfg.tolerance if tolerance is None else tolerance
    max_iters = cfg.max_iters if max_iters is None else max_iters
    if cfg.dual_method not in DUAL_METHODS:
        raise CostModelError(f"Unknown dual method '{cfg.dual_method}'")

    grid = problem.grid
    objective = DualObjective(problem)
    if problem.source.is_zero():
        return ScalarField.zeros(grid), DualReport(0.0, 0, 0.0, True, cfg.dual_method)

    gtol = tolerance * (1.0 + problem.source.max_abs)
    v = np.zeros(grid.node_count) if initial is None else np.array(initial.values, dtype=float)
    v -= np.mean(v)

    method = cfg.dual_method
    runners = {
        "quasi_newton": lambda x, budget: _quasi_newton(objective, x, gtol, budget, cfg.curvature_floor),
        "lbfgs": lambda x, budget: _lbfgs(objective, x, gtol, budget),
        "agd": lambda x, budget: _accelerated_gradient(objective, x, gtol, budget),
    }
    fallback = cfg.fallback_method if cfg.fallback_method and cfg.fallback_method != method else ""
    if fallback and fallback not in DUAL_METHODS:
        raise CostModelError(f"Unknown fallback method '{fallback}'")
    reserve = int(cfg.fallback_share * max_iters) if fallback else 0
    v, iterations, converged = runners[method](v, max_iters - reserve)

    remaining = max_iters - iterations
    if not converged and remaining > 0 and fallback:
        logger.warning(f"Dual method '{method}' did not converge; falling back to "
                       f"'{fallback}' for {remaining} iterations")
        method = fallback
        v, extra, converged = runners[method](v, remaining)
        iterations += extra

    v = v - np.mean(v)
    value, grad = objective.value_and_gradient(v)
    report = DualReport(
        dual_energy=-value,
        iterations=iterations,
        gradient_norm=_sup(grad),
        converged=converged,
        method=method,
    )
    if not converged:
        logger.warning(f"Dual solve stopped after {iterations} iterations with gradient "
                       f"{report.gradient_norm:.3e} > {gtol:.3e}")
    return ScalarField(grid, v), report


def recover_flux(problem: Problem, potential: ScalarField) -> FluxField:
    """
    Recover the flux f_e = h^(N-1) grad_H_star(x_e, g_e(v)) from a potential.
    """
    problem.grid.check_same(potential.grid)
    return FluxField(problem.grid, DualObjective(problem).flux_values(potential.values))


def project_feasible(flux: FluxField, source: SourceMeasure, tolerance: float = 1e-10,
                     config: Optional[SolverConfig] = None) -> FluxField:
    """
    Add the minimal-norm correction that makes divergence(f) = t.

    The correction is B^T y with (B B^T) y = t - divergence(f), solved by
    conjugate gradients; a pinned-node direct solve takes over if CG stops
    above the tolerance.

    Args:
        flux: Flux to correct.
        source: Target divergence.
        tolerance: Target max-norm of the divergence residual.
        config: Supplies the CG iteration limit.
    """
    cfg = config or SolverConfig()
    grid = flux.grid
    grid.check_same(source.grid)
    residual = source.values - grid.divergence_values(flux.values)
    residual -= np.mean(residual)
    if _sup(residual) <= 0.1 * tolerance or grid.edge_count == 0:
        return flux

    laplacian = grid.laplacian
    y, info = spla.cg(laplacian, residual, rtol=0.0, atol=0.1 * tolerance,
                      maxiter=cfg.cg_max_iters)
    corrected = flux.values + grid.incidence.T @ y
    remaining = source.values - grid.divergence_values(corrected)
    remaining -= np.mean(remaining)
    if info != 0 or _sup(remaining) > tolerance:
        logger.debug(f"CG projection left residual {_sup(remaining):.3e} (info={info}); "
                     "using direct solve")
        y = np.zeros(grid.node_count)
        y[1:] = spla.spsolve(laplacian[1:, 1:].tocsc(), residual[1:])
        corrected = flux.values + grid.incidence.T @ y
    return FluxField(grid, corrected)


def primal_energy(problem: Problem, flux: FluxField) -> float:
    """P(f) = sum_e h^N H(x_e, |f_e| / h^(N-1))."""
    problem.grid.check_same(flux.grid)
    grid = problem.grid
    density = np.abs(flux.values) / grid.face_area
    return grid.cell_volume * float(np.sum(problem.cost.eval_H(None, density)))


def dual_energy(problem: Problem, potential: ScalarField) -> float:
    """D(v) = <t, v> - sum_e h^N H*(x_e, g_e(v))."""
    problem.grid.check_same(potential.grid)
    grid = problem.grid
    g = grid.gradient_values(potential.values)
    conjugate = float(np.sum(problem.cost.eval_H_star(None, g)))
    return problem.source.pair(potential.values) - grid.cell_volume * conjugate


def duality_gap(problem: Problem, flux: FluxField, potential: ScalarField,
                feasibility_tolerance: float = 1e-8) -> float:
    """
    Return P(f) - D(v) for a feasible flux.

    Raises:
        InfeasibleFluxError: If max|divergence(f) - t| exceeds
            feasibility_tolerance * (1 + max|t|); names the worst node.
    """
    residual, node = divergence_residual(flux, problem.source)
    if node is not None and residual > feasibility_tolerance * (1.0 + problem.source.max_abs):
        raise InfeasibleFluxError(node, residual)
    return primal_energy(problem, flux) - dual_energy(problem, potential)


def solve(problem: Problem, tolerance: Optional[float] = None, max_iters: Optional[int] = None,
          config: Optional[SolverConfig] = None,
          initial: Optional[ScalarField] = None) -> Tuple[FluxField, ScalarField, SolveReport]:
    """
    Solve the primal and dual problems together.

    Runs solve_dual, recover_flux, project_feasible and duality_gap. The
    solve has converged when gap <= tolerance * (1 + |P|) and the divergence
    residual is at most tolerance; dual stationarity is reported on its own.
    When the dual converged but the gap is still above tolerance, the dual
    is re-solved from its last iterate with a tighter stationarity target,
    up to config.refinements times.

    Returns:
        Tuple of the feasible flux, the potential and a SolveReport.
    """
    cfg = config or SolverConfig()
    tolerance = cfg.tolerance if tolerance is None else tolerance
    max_iters = cfg.max_iters if max_iters is None else max_iters
    clock = SolveClock()

    dual_tolerance = tolerance
    potential = initial
    iterations = 0
    for refinement in range(cfg.refinements + 1):
        with clock.phase("dual"):
            potential, dual = solve_dual(problem, dual_tolerance, max_iters - iterations,
                                         cfg, initial=potential)
        iterations += dual.iterations
        with clock.phase("recovery"):
            flux = recover_flux(problem, potential)
        with clock.phase("projection"):
            flux = project_feasible(flux, problem.source, cfg.feasibility_tolerance, cfg)

        residual, _ = divergence_residual(flux, problem.source)
        primal = primal_energy(problem, flux)
        dual_value = dual_energy(problem, potential)
        gap = primal - dual_value
        converged = gap <= tolerance * (1.0 + abs(primal)) and residual <= tolerance
        if converged or not dual.converged or iterations >= max_iters:
            break
        logger.debug(f"Refinement {refinement + 1}: gap {gap:.3e} above tolerance, "
                     f"tightening dual target")
        dual_tolerance *= 0.01

    report = SolveReport(
        primal_energy=primal,
        dual_energy=dual_value,
        gap=gap,
        divergence_residual=residual,
        iterations=iterations,
        converged=converged,
        method=dual.method,
        gradient_norm=dual.gradient_norm,
        elapsed=clock.total(),
        dual_stationary=dual.converged,
    )
    level = logging.INFO if converged else logging.WARNING
    logger.log(level, f"Solve {'converged' if converged else 'did NOT converge'}: "
                      f"P={primal:.10g} D={dual_value:.10g} gap={gap:.3e} "
                      f"residual={residual:.3e} iterations={iterations} ({clock.summary()})")
    return flux, potential, report


def solve_quadratic(problem: Problem) -> Tuple[FluxField, ScalarField]:
    """
    Solve the p = 2 power-cost problem with one weighted Laplacian solve.

    With H = c z^2 / 2 the dual optimality condition is the linear system
    h^(N-2) B diag(1/c) B^T v = t.

    Raises:
        CostModelError: If the cost is not the p = 2 power family.
    """
    cost = problem.cost
    if cost.kind is not CostKind.POWER or cost.p != 2.0:
        raise CostModelError("solve_quadratic needs the power cost with p = 2")
    grid = problem.grid
    c = np.broadcast_to(cost.coefficient(None), (grid.edge_count,)).astype(float)
    laplacian = grid.spacing ** (grid.ndim - 2) * grid.weighted_laplacian(1.0 / c)
    target = problem.source.values - np.mean(problem.source.values)

    v = np.zeros(grid.node_count)
    if grid.node_count > 1:
        v[1:] = spla.spsolve(laplacian[1:, 1:].tocsc(), target[1:])
    v -= np.mean(v)
    flux = grid.face_area * grid.gradient_values(v) / c
    return FluxField(grid, flux), ScalarField(grid, v)


def potential_seminorm(grid: Grid, potential: ScalarField, q: float) -> float:
    """(sum_e h^N |g_e|^q)^(1/q), the discrete W^{1,q} seminorm."""
    grid.check_same(potential.grid)
    g = grid.gradient_values(potential.values)
    return float(np.sum(grid.cell_volume * np.abs(g) ** q)) ** (1.0 / q)


@dataclass(frozen=True)
class NormReport:
    """
    Dual norm of a source computed two ways.

    min_flux comes from the primal-dual solve and dual_formula from a
    separate dual maximization started at zero.
    """
    min_flux: float
    dual_formula: float
    solve_report: SolveReport
    dual_report: Optional[DualReport] = None

    @property
    def disagreement(self) -> float:
        scale = max(abs(self.min_flux), abs(self.dual_formula))
        return abs(self.min_flux - self.dual_formula) / scale if scale > 0.0 else 0.0


def _norm_problem(source: SourceMeasure, p: float) -> Problem:
    if abs(np.sum(source.values)) > 1e-9 * max(source.total_variation, np.finfo(float).tiny):
        raise SourceBalanceError("source must sum to zero")
    return Problem(source.grid, source, CostModel(CostKind.POWER, p=p))


def _min_flux_norm(problem: Problem, tolerance: Optional[float],
                   config: Optional[SolverConfig]) -> Tuple[float, SolveReport]:
    _, _, report = solve(problem, tolerance=tolerance, config=config)
    p = problem.cost.p
    return (p * max(report.primal_energy, 0.0)) ** (1.0 / p), report


def _dual_formula_norm(problem: Problem, tolerance: Optional[float],
                       config: Optional[SolverConfig]) -> Tuple[float, DualReport]:
    potential, report = solve_dual(problem, tolerance=tolerance, config=config)
    p = problem.cost.p
    return (p * max(dual_energy(problem, potential), 0.0)) ** (1.0 / p), report


def sobolev_norms(source: SourceMeasure, p: float, tolerance: Optional[float] = None,
                  config: Optional[SolverConfig] = None) -> NormReport:
    """
    Compute the W^{-1,p} dual norm of a zero-sum source two ways.

    min_flux is the L^p norm of the optimal flux for H = |z|^p / p;
    dual_formula is (p max_v [<t, v> - (1/q) sum_e h^N |g_e|^q])^(1/p),
    maximized by its own call to solve_dual.

    Raises:
        SourceBalanceError: If the source does not sum to zero.
        CostModelError: If p <= 1.
    """
    problem = _norm_problem(source, p)
    if source.is_zero():
        empty = SolveReport(0.0, 0.0, 0.0, 0.0, 0, True, "none", dual_stationary=True)
        return NormReport(0.0, 0.0, empty)

    min_flux, report = _min_flux_norm(problem, tolerance, config)
    dual_formula, dual = _dual_formula_norm(problem, tolerance, config)
    return NormReport(min_flux, dual_formula, report, dual)


def sobolev_dual_norm(source: SourceMeasure, p: float, method: str = "min_flux",
                      tolerance: Optional[float] = None,
                      config: Optional[SolverConfig] = None) -> float:
    """
    Return the W^{-1,p} dual norm of a source by the chosen method.

    Args:
        source: Zero-sum datum.
        p: Exponent, p > 1.
        method: "min_flux" or "dual_formula".
        tolerance: Solver tolerance.
        config: Solver settings.
    """
    if method not in ("min_flux", "dual_formula"):
        raise CostModelError(f"Unknown norm method '{method}'")
    problem = _norm_problem(source, p)
    if source.is_zero():
        return 0.0
    if method == "min_flux":
        return _min_flux_norm(problem, tolerance, config)[0]
    return _dual_formula_norm(problem, tolerance, config)[0]
