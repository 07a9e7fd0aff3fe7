"""Brute-force references for small instances.

The scalar grid search is exhaustive over its grid: for L=3 the two level-2
variables only interact with θ_{1,1} through the chain, so suffix maxima
along the sorted grid give the exact grid optimum in linear time.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import constants as C
from . import psd_linalg as la
from .errors import UnsupportedDimension
from .tree_model import Node, ProblemInstance, children, nodes

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    """Grid step and the number of ×10 zoom passes around the incumbent."""

    resolution: float = C.ORACLE_DEFAULT_RESOLUTION
    refine_levels: int = 0

    def __post_init__(self):
        if not np.isfinite(self.resolution) or self.resolution <= 0:
            raise ValueError(f"grid resolution must be positive, got {self.resolution}")
        if self.refine_levels < 0 or self.refine_levels > C.ORACLE_MAX_LEVELS:
            raise ValueError(f"refine_levels must lie in [0, {C.ORACLE_MAX_LEVELS}]")


class _ScalarTerms:
    """Vectorized node terms of the scalar objective, in precision form."""

    def __init__(self, inst: ProblemInstance):
        self.sigma2 = float(inst.sigma_x[0, 0])
        self.precision = {
            node: max(0.0, 1.0 / float(inst.d(node)[0, 0]) - 1.0 / self.sigma2) for node in nodes(inst.L)
        }
        self.constant = 0.5 * np.log1p(self.precision[(1, 1)] * self.sigma2)

    def _log_ratio(self, node, theta):
        p = self.precision[node]
        return np.log1p(p * theta) - np.log1p(p * self.sigma2)

    def node_term(self, node: Node, theta: np.ndarray) -> np.ndarray:
        odd, even = children(node)
        return 0.5 * (
            self._log_ratio(node, theta) - self._log_ratio(odd, theta) - self._log_ratio(even, theta)
        )


def _suffix_argmax(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Running maximum from the right and where it is attained (first index on ties)."""
    n = len(values)
    best = np.empty(n)
    where = np.empty(n, dtype=int)
    best[-1], where[-1] = values[-1], n - 1
    for idx in range(n - 2, -1, -1):
        if values[idx] >= best[idx + 1]:
            best[idx], where[idx] = values[idx], idx
        else:
            best[idx], where[idx] = best[idx + 1], where[idx + 1]
    return best, where


def _grid_max(inst: ProblemInstance, terms: _ScalarTerms, grid: np.ndarray):
    if inst.L == 2:
        values = terms.node_term((1, 1), grid)
        idx = int(np.argmax(values))
        return {(1, 1): float(grid[idx])}, float(terms.constant + values[idx])
    root = terms.node_term((1, 1), grid)
    best_odd, at_odd = _suffix_argmax(terms.node_term((2, 1), grid))
    best_even, at_even = _suffix_argmax(terms.node_term((2, 2), grid))
    total = root + best_odd + best_even
    idx = int(np.argmax(total))
    theta = {
        (1, 1): float(grid[idx]),
        (2, 1): float(grid[at_odd[idx]]),
        (2, 2): float(grid[at_even[idx]]),
    }
    return theta, float(terms.constant + total[idx])


def scalar_grid_max(inst: ProblemInstance, grid: GridSpec) -> Tuple[Dict[Node, float], float]:
    """Exhaustive maximization of the scalar objective on {k·r} ∪ {σ²}.

    Refinement passes add a grid ten times finer around every coordinate of
    the incumbent, so the value never decreases from one pass to the next.

    Raises:
        UnsupportedDimension: unless m = 1 and L is 2 or 3.
    """
    if inst.m != 1 or inst.L not in (2, 3):
        raise UnsupportedDimension(f"scalar oracle needs m=1 and L in {{2, 3}}, got m={inst.m}, L={inst.L}")
    terms = _ScalarTerms(inst)
    sigma2 = terms.sigma2
    step = grid.resolution
    points = np.append(np.arange(0.0, sigma2, step), sigma2)
    theta, value = _grid_max(inst, terms, points)
    logger.debug("oracle grid %d points: value=%.12f", len(points), value)

    for level in range(grid.refine_levels):
        window = step
        step = step / C.ORACLE_ZOOM
        extra = [points]
        for t in theta.values():
            lo, hi = max(0.0, t - window), min(sigma2, t + window)
            extra.append(np.arange(lo, hi, step))
        points = np.unique(np.concatenate(extra))
        theta, value = _grid_max(inst, terms, points)
        logger.debug("oracle zoom %d (%d points): value=%.12f", level + 1, len(points), value)
    return theta, value


def known_closedforms(inst: ProblemInstance, tol: Optional[la.Tolerance] = None) -> Optional[float]:
    """Closed-form optimum for the all-trivial and central-only patterns, else None."""
    tol = tol or la.DEFAULT_TOLERANCE
    eps = tol.eq_eps * (1.0 + la.max_abs(inst.sigma_x))

    def trivial(node):
        return la.residual(inst.d(node), inst.sigma_x) <= eps

    if not all(trivial(node) for node in nodes(inst.L) if node != (1, 1)):
        return None
    if trivial((1, 1)):
        return 0.0
    return 0.5 * (la.logdet(inst.sigma_x) - la.logdet(inst.d((1, 1))))
