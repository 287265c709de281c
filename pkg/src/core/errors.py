"""
Error types for the congestion toolkit.

Every validation failure raised by the library derives from CongestionError,
which is itself a ValueError so callers that only expect ValueError keep
working. Solver non-convergence is not an error: it is carried by the
SolveReport.
"""
from typing import Optional, Sequence


class CongestionError(ValueError):
    """Base class for all invalid-input conditions."""


class GridMismatchError(CongestionError):
    """Raised when fields living on different grids are combined."""


class SourceBalanceError(CongestionError):
    """Raised when a source measure does not sum to zero."""


class CostModelError(CongestionError):
    """Raised for invalid cost parameters or arguments."""


class GeometryError(CongestionError):
    """Raised for points, dipoles or cones that do not fit the grid."""


class InvalidPathError(CongestionError):
    """Raised when a path is not a simple chain of grid edges."""


class InfeasibleFluxError(CongestionError):
    """
    Raised when a flux does not realize the source.

    Attributes:
        node: Index of the node with the largest divergence violation.
        residual: Size of the violation at that node.
    """

    def __init__(self, node: int, residual: float):
        self.node = int(node)
        self.residual = float(residual)
        super().__init__(
            f"Flux is infeasible at node {self.node}: "
            f"|divergence - source| = {self.residual:.3e}"
        )


class CyclicFluxError(CongestionError):
    """
    Raised when an operation needs an acyclic flux and finds a cycle.

    Attributes:
        cycle: Node sequence of the witness cycle.
    """

    def __init__(self, cycle: Sequence[int]):
        self.cycle = [int(n) for n in cycle]
        super().__init__(
            f"Flux contains a directed cycle through nodes {self.cycle}; "
            "run cancel-cycles first"
        )


class StrandedMassError(CongestionError):
    """Raised when path decomposition leaves unexplained mass behind."""

    def __init__(self, amount: float, node: Optional[int] = None):
        self.amount = float(amount)
        self.node = node
        where = f" at node {node}" if node is not None else ""
        super().__init__(f"Decomposition stranded mass {self.amount:.3e}{where}")


class ProblemFileError(CongestionError):
    """
    Raised when a problem, solution or paths file violates its schema.

    Attributes:
        key_path: Dotted path of the offending key, e.g. "grid.dims".
    """

    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")
