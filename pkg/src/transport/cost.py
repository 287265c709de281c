"""
Cost module for the congestion toolkit.

This module provides the congestion cost families with closed-form
Legendre transforms:

    power:        H(x, z) = c(x) |z|^p / p
                  H*(x, xi) = c(x)^(1-q) |xi|^q / q
    power_delta:  H(x, z) = delta |z| + c(x) |z|^p / p
                  H*(x, xi) = c(x)^(1-q) (|xi| - delta)_+^q / q

where c(x) = alpha * w(x) with w an optional positive weight per edge and
q = p / (p - 1). Both conjugates are C^1, so grad_H_star is defined
everywhere; for power_delta it vanishes on the congestion threshold
|xi| <= delta.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np

from src.core.errors import CostModelError

logger = logging.getLogger("congestion.cost")

EdgeSelector = Union[None, int, np.ndarray, slice]


class CostKind(Enum):
    """Supported congestion cost families."""

    POWER = "power"
    POWER_DELTA = "power_delta"


@dataclass(frozen=True, eq=False)
class CostModel:
    """
    Congestion cost with p-growth and its conjugate.

    Attributes:
        kind: Cost family.
        p: Growth exponent, 1 < p < infinity.
        alpha: Positive coefficient of the power term.
        delta: Threshold of the linear term (power_delta only).
        weights: Optional positive weight per edge, sampled at face centers.
    """
    kind: CostKind = CostKind.POWER
    p: float = 2.0
    alpha: float = 1.0
    delta: float = 0.0
    weights: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        try:
            kind = CostKind(self.kind)
        except ValueError:
            raise CostModelError(f"cost.kind must be 'power' or 'power_delta', got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "delta", float(self.delta))

        if not np.isfinite(self.p) or self.p <= 1.0:
            raise CostModelError(f"cost.p must satisfy 1 < p < inf, got {self.p}")
        if not np.isfinite(self.alpha) or self.alpha <= 0.0:
            raise CostModelError(f"cost.alpha must be positive, got {self.alpha}")
        if not np.isfinite(self.delta) or self.delta < 0.0:
            raise CostModelError(f"cost.delta must be nonnegative, got {self.delta}")
        if kind is CostKind.POWER and self.delta != 0.0:
            raise CostModelError("cost.delta is only meaningful for kind 'power_delta'")

        if self.weights is not None:
            weights = np.array(self.weights, dtype=float).reshape(-1)
            if np.any(~np.isfinite(weights)) or np.any(weights <= 0.0):
                raise CostModelError("cost.weights must be positive and finite")
            weights.setflags(write=False)
            object.__setattr__(self, "weights", weights)

    @property
    def q(self) -> float:
        """Conjugate exponent p / (p - 1)."""
        return self.p / (self.p - 1.0)

    @property
    def threshold(self) -> float:
        return self.delta if self.kind is CostKind.POWER_DELTA else 0.0

    def coefficient(self, edge_index: EdgeSelector = None):
        """
        Return c = alpha * w for the selected edges.

        Args:
            edge_index: Edge index, index array, slice, or None for all edges.
                Without weights the scalar alpha is returned.
        """
        if self.weights is None:
            return self.alpha
        if edge_index is None:
            return self.alpha * self.weights
        return self.alpha * self.weights[edge_index]

    def eval_H(self, edge_index: EdgeSelector, z) -> np.ndarray:
        """
        Evaluate H(x_e, z) for nonnegative z.

        Raises:
            CostModelError: If any z is negative.
        """
        z = np.asarray(z, dtype=float)
        if np.any(z < 0.0):
            raise CostModelError("eval_H needs z >= 0")
        c = self.coefficient(edge_index)
        return self.threshold * z + c * z ** self.p / self.p

    def eval_H_star(self, edge_index: EdgeSelector, xi) -> np.ndarray:
        """Evaluate the conjugate H*(x_e, xi)."""
        xi = np.asarray(xi, dtype=float)
        c = self.coefficient(edge_index)
        excess = np.maximum(np.abs(xi) - self.threshold, 0.0)
        q = self.q
        return c ** (1.0 - q) * excess ** q / q

    def grad_H_star(self, edge_index: EdgeSelector, xi) -> np.ndarray:
        """Evaluate the derivative of H* in xi."""
        xi = np.asarray(xi, dtype=float)
        c = self.coefficient(edge_index)
        excess = np.maximum(np.abs(xi) - self.threshold, 0.0)
        return c ** (1.0 - self.q) * excess ** (self.q - 1.0) * np.sign(xi)

    def curvature_H_star(self, edge_index: EdgeSelector, xi, floor: float = 0.0) -> np.ndarray:
        """
        Second derivative of H* in xi, with the excess |xi| - delta bounded
        below by floor where it is positive.

        For q < 2 the second derivative is unbounded at the threshold; the
        floor keeps it finite. Inside the threshold the value is zero.
        """
        xi = np.asarray(xi, dtype=float)
        c = self.coefficient(edge_index)
        excess = np.abs(xi) - self.threshold
        active = excess > 0.0
        safe = np.where(active, np.maximum(excess, floor), 1.0)
        q = self.q
        return np.where(active, c ** (1.0 - q) * (q - 1.0) * safe ** (q - 2.0), 0.0)

    def marginal_cost(self, edge_index: EdgeSelector, z) -> np.ndarray:
        """
        Right derivative H'(x_e, z) for z >= 0; equals delta at z = 0.
        """
        z = np.asarray(z, dtype=float)
        if np.any(z < 0.0):
            raise CostModelError("marginal_cost needs z >= 0")
        c = self.coefficient(edge_index)
        return self.threshold + c * z ** (self.p - 1.0)

    def check_growth(self, lam: float, sample_zs: Sequence[float],
                     edge_index: EdgeSelector = None) -> "GrowthReport":
        """
        Check lam (t^p - 1) <= H(x, t) <= (t^p + 1) / lam on samples.

        Args:
            lam: Growth constant in (0, 1].
            sample_zs: Nonempty collection of t >= 0.
            edge_index: Edges whose weights are checked (all by default).

        Returns:
            GrowthReport: Pass/fail per bound and the largest admissible lambda.
        """
        zs = np.asarray(sample_zs, dtype=float).reshape(-1)
        if zs.size == 0:
            raise CostModelError("check_growth needs at least one sample")
        if not 0.0 < lam <= 1.0:
            raise CostModelError(f"lambda must lie in (0, 1], got {lam}")

        c = np.atleast_1d(self.coefficient(edge_index))
        t = zs[:, None]
        H = self.threshold * t + c[None, :] * t ** self.p / self.p
        tp = t ** self.p
        lower_ok = lam * (tp - 1.0) <= H
        upper_ok = H <= (tp + 1.0) / lam

        bounds = [1.0]
        above_one = np.broadcast_to(tp > 1.0, H.shape)
        positive = H > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            if np.any(above_one):
                bounds.append(float(np.min((H / (tp - 1.0))[above_one])))
            if np.any(positive):
                bounds.append(float(np.min(((tp + 1.0) / H)[positive])))

        violations = sorted({float(z) for z in zs[~np.all(lower_ok & upper_ok, axis=1)]})
        report = GrowthReport(
            lam=float(lam),
            lower_ok=bool(np.all(lower_ok)),
            upper_ok=bool(np.all(upper_ok)),
            largest_lambda=min(bounds),
            violating_samples=violations,
        )
        if not report.passed:
            logger.debug(f"Growth check failed for lambda={lam}: {len(violations)} samples")
        return report


@dataclass(frozen=True)
class GrowthReport:
    """
    Outcome of CostModel.check_growth.

    Attributes:
        lam: Tested lambda.
        lower_ok: Lower bound held on every sample.
        upper_ok: Upper bound held on every sample.
        largest_lambda: Largest lambda in (0, 1] satisfying both bounds on the samples.
        violating_samples: Samples where either bound failed.
    """
    lam: float
    lower_ok: bool
    upper_ok: bool
    largest_lambda: float
    violating_samples: List[float]

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok
