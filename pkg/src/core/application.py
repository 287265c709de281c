"""
Application class for the congestion toolkit.

This module provides the command line surface: it parses arguments, sets up
logging and configuration, and dispatches to one command per subparser.

Exit status: 0 when the command converged or verified, 1 when a solver did
not converge or a verification failed, 2 for invalid input.
"""
import argparse
import logging
import sys
from typing import List, Optional

import numpy as np

from src.core.config import DUAL_METHODS, SolverConfig
from src.core.errors import CongestionError, ProblemFileError
from src.core.solve_clock import SolveClock
from src.discretization.grid import divergence_residual
from src.experiments.dipoles import scaling_experiment
from src.formats.files import (
    read_problem, read_solution, write_dipole_table, write_paths, write_solution,
)
from src.transport.beckmann import Problem, SolveReport, primal_energy, dual_energy, solve, sobolev_norms
from src.transport.lagrangian import cancel_cycles, decompose, traffic_intensity, wardrop_energy

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2

VERIFY_TOLERANCE = 1e-9


class Application:
    """
    Command line application managing one toolkit invocation.

    This class owns the configuration and the logger, builds the argument
    parser and runs the selected command.
    """

    def __init__(self, config=None):
        """
        Initialize the application.

        Args:
            config (SolverConfig, optional): Settings for the solvers.
                If None, default configuration is used.
        """
        self.config = config or SolverConfig()
        self.logger = self._setup_logger()
        self.clock = SolveClock()
        self.parser = self._build_parser()

    def _setup_logger(self):
        """Set up and configure the logger."""
        logger = logging.getLogger("congestion")
        logger.setLevel(logging.DEBUG if self.config.debug_mode else logging.INFO)

        if not logger.handlers:
            handler = logging.StreamHandler(sys.stderr)
            formatter = logging.Formatter(
                '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
            )
            handler.setFormatter(formatter)
            logger.addHandler(handler)

        return logger

    def _build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog="congestion",
            description="Congested transport on grids: Beckmann, dual and Wardrop formulations.",
        )
        parser.add_argument("--debug", action="store_true", help="log at DEBUG level")
        commands = parser.add_subparsers(dest="command", required=True)

        def command(name: str, help_text: str) -> argparse.ArgumentParser:
            sub = commands.add_parser(name, help=help_text)
            sub.add_argument("--config", metavar="PATH", help="JSON solver configuration")
            return sub

        sub = command("solve", "solve a problem file and write a solution file")
        sub.add_argument("problem")
        sub.add_argument("out")
        sub.add_argument("--tol", type=float)
        sub.add_argument("--max-iters", type=int)
        sub.add_argument("--method", choices=DUAL_METHODS)
        sub.set_defaults(handler=self.cmd_solve)

        sub = command("decompose", "decompose a solution flux into weighted paths")
        sub.add_argument("solution")
        sub.add_argument("problem")
        sub.add_argument("out")
        sub.add_argument("--eps", type=float, help="flux threshold relative to max|f|")
        sub.set_defaults(handler=self.cmd_decompose)

        sub = command("norm", "compute the negative Sobolev norm of a problem's source")
        sub.add_argument("problem")
        sub.add_argument("--p", type=float, help="exponent; defaults to the problem's cost.p")
        sub.add_argument("--method", choices=("both", "min_flux", "dual_formula"), default="both")
        sub.add_argument("--tol", type=float)
        sub.set_defaults(handler=self.cmd_norm)

        sub = command("dipole", "run the dipole scaling sweep and write a table")
        sub.add_argument("out")
        sub.add_argument("--N", type=int, default=2)
        sub.add_argument("--p", type=float, required=True)
        sub.add_argument("--separations", type=float, nargs="+", default=[0.25, 0.125, 0.0625])
        sub.add_argument("--refinements", type=int, nargs="+", default=[32, 64, 128],
                         help="cells per unit length; the box grows with the largest separation")
        sub.set_defaults(handler=self.cmd_dipole)

        sub = command("cancel-cycles", "remove circulations from a solution flux")
        sub.add_argument("solution")
        sub.add_argument("problem")
        sub.add_argument("out")
        sub.add_argument("--eps", type=float, help="flux threshold relative to max|f|")
        sub.set_defaults(handler=self.cmd_cancel_cycles)

        sub = command("render", "write PNG images of a 2-D solution")
        sub.add_argument("solution")
        sub.add_argument("out")
        sub.add_argument("--scale", type=int, help="pixels per cell")
        sub.set_defaults(handler=self.cmd_render)
        return parser

    def _configure(self, args: argparse.Namespace) -> None:
        if args.config and not self.config.load(args.config):
            raise ProblemFileError("config", f"cannot load {args.config}")
        if args.debug:
            self.config.debug_mode = True
        self.logger.setLevel(logging.DEBUG if self.config.debug_mode else logging.INFO)

    def run(self, argv: Optional[List[str]] = None) -> int:
        """
        Parse arguments and run the selected command.

        Args:
            argv: Argument list without the program name; sys.argv is used
                when None.

        Returns:
            int: Exit status.
        """
        args = self.parser.parse_args(argv)
        try:
            self._configure(args)
            with self.clock.phase(args.command):
                status = args.handler(args)
        except CongestionError as e:
            self.logger.error(str(e))
            return EXIT_INVALID
        self.logger.debug(f"Command '{args.command}' finished ({self.clock.summary()})")
        return status

    def cmd_solve(self, args: argparse.Namespace) -> int:
        """Solve a problem file; exit 0 iff the solve converged."""
        self.config.override(tolerance=args.tol, max_iters=args.max_iters, dual_method=args.method)
        problem = read_problem(args.problem)
        self.logger.info(f"Solving {build_problem_summary(problem)}")
        flux, potential, report = solve(problem, config=self.config)
        write_solution(args.out, flux, potential, report)
        print(f"converged={report.converged} primal_energy={report.primal_energy:.17g} "
              f"dual_energy={report.dual_energy:.17g} gap={report.gap:.3e} "
              f"divergence_residual={report.divergence_residual:.3e}")
        return EXIT_OK if report.converged else EXIT_FAILED

    def cmd_decompose(self, args: argparse.Namespace) -> int:
        """
        Decompose a stored flux and print the three verification residuals.
        """
        self.config.override(decompose_eps=args.eps)
        problem = read_problem(args.problem)
        flux, _, _ = read_solution(args.solution, problem.grid)

        paths = decompose(flux, problem.source, eps=self.config.decompose_eps * flux.max_abs,
                           config=self.config)
        write_paths(args.out, paths, problem.cost)

        intensity = traffic_intensity(paths)
        reconstruction = float(np.max(np.abs(intensity.vector - flux.values), initial=0.0))
        pushforward = float(np.max(np.abs(paths.boundary() - problem.source.values), initial=0.0))
        primal = primal_energy(problem, flux)
        energy_gap = abs(wardrop_energy(paths, problem.cost) - primal)
        print(f"paths={len(paths)} mass={paths.total_mass:.17g}")
        print(f"reconstruction_residual={reconstruction:.3e}")
        print(f"pushforward_residual={pushforward:.3e}")
        print(f"energy_difference={energy_gap:.3e}")

        verified = (reconstruction <= VERIFY_TOLERANCE * (1.0 + flux.max_abs)
                    and pushforward <= VERIFY_TOLERANCE * (1.0 + problem.source.max_abs)
                    and energy_gap <= VERIFY_TOLERANCE * (1.0 + primal))
        if not verified:
            self.logger.warning("Decomposition does not reproduce the flux within tolerance")
        return EXIT_OK if verified else EXIT_FAILED

    def cmd_norm(self, args: argparse.Namespace) -> int:
        """Print the dual norm of a problem's source."""
        self.config.override(tolerance=args.tol)
        problem = read_problem(args.problem)
        p = problem.cost.p if args.p is None else args.p
        norms = sobolev_norms(problem.source, p, config=self.config)
        if args.method in ("both", "min_flux"):
            print(f"min_flux {norms.min_flux:.17g}")
        if args.method in ("both", "dual_formula"):
            print(f"dual_formula {norms.dual_formula:.17g}")
        if args.method == "both":
            print(f"disagreement {norms.disagreement:.3e}")
        return EXIT_OK if norms.solve_report.converged else EXIT_FAILED

    def cmd_dipole(self, args: argparse.Namespace) -> int:
        """Run the dipole sweep and write the table."""
        result = scaling_experiment(args.N, args.p, args.separations, args.refinements,
                                    config=self.config)
        write_dipole_table(args.out, result)
        slope = "none" if result.slope is None else f"{result.slope:.6f}"
        print(f"rows={len(result.rows)} slope={slope} expected={result.expected_slope:.6f}"
              + (f" flag={result.flag}" if result.flag else ""))
        converged = all(row.converged for row in result.rows)
        return EXIT_OK if converged else EXIT_FAILED

    def cmd_cancel_cycles(self, args: argparse.Namespace) -> int:
        """Rewrite a solution with circulations removed and energies updated."""
        self.config.override(decompose_eps=args.eps)
        problem = read_problem(args.problem)
        flux, potential, stored = read_solution(args.solution, problem.grid)

        cleaned = cancel_cycles(flux, eps=self.config.decompose_eps * flux.max_abs)
        residual, _ = divergence_residual(cleaned, problem.source)
        primal = primal_energy(problem, cleaned)
        dual_value = dual_energy(problem, potential)
        report = SolveReport(
            primal_energy=primal,
            dual_energy=dual_value,
            gap=primal - dual_value,
            divergence_residual=residual,
            iterations=int(stored["iterations"]),
            converged=bool(stored["converged"]),
        )
        write_solution(args.out, cleaned, potential, report)
        removed = float(np.sum(np.abs(flux.values)) - np.sum(np.abs(cleaned.values)))
        print(f"removed_circulation={removed:.3e} primal_energy={primal:.17g}")
        return EXIT_OK

    def cmd_render(self, args: argparse.Namespace) -> int:
        """Render a 2-D solution to PNG."""
        # imported here so the other commands never load pygame
        from src.utils.field_renderer import render_solution

        self.config.override(render_scale=args.scale)
        flux, potential, _ = read_solution(args.solution)
        written = render_solution(flux, potential, args.out, int(self.config.render_scale))
        return EXIT_OK if written else EXIT_FAILED


def build_problem_summary(problem: Problem) -> str:
    """One-line description of a problem for logs."""
    return (f"grid {problem.grid.dims} h={problem.grid.spacing:g}, "
            f"cost {problem.cost.kind.value} p={problem.cost.p:g}, "
            f"mass {problem.source.mass:.6g}")
