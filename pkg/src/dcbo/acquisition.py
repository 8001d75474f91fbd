"""Causal expected improvement over a set of candidate intervention sets."""
from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import norm

GRID_SIZES = {1: 100, 2: 31, 3: 11}


def candidate_grid(domain, variables: Sequence[str], sizes: Mapping[int, int] = GRID_SIZES) -> np.ndarray:
    """Regular grid spanning the domain box of ``variables``, shape ``(G, d)``."""
    d = len(variables)
    if d == 0:
        raise ValueError("cannot build a grid for an empty intervention set")
    per_axis = sizes.get(d, sizes[max(sizes)])
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in domain.box(variables)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.reshape(-1) for m in mesh])


def expected_improvement(mean, variance, y_best):
    """``E[max(y_best - Y, 0)]`` for ``Y ~ N(mean, variance)`` (minimisation)."""
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    diff = y_best - mean
    sd = np.sqrt(variance)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, diff / np.where(sd > 0, sd, 1.0), 0.0)
        ei = np.where(sd > 0, diff * norm.cdf(z) + sd * norm.pdf(z), np.maximum(diff, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def unit_cost(variables, x) -> float:
    return 1.0


def per_variable_cost(table: Mapping[str, float]) -> Callable:
    """Cost of a set as the sum of fixed per-variable costs."""
    def cost(variables, x):
        return float(sum(table[v] for v in variables))
    return cost


def optimize_set(mean, variance, grid, y_best, cost=1.0) -> tuple[np.ndarray, float]:
    """Grid maximiser of ``EI / cost``; ties go to the lowest grid index.

    ``mean`` and ``variance`` are the posterior over the grid. ``cost`` is a
    scalar or an array with one entry per grid point.
    """
    grid = np.atleast_2d(grid)
    if len(grid) == 0:
        raise ValueError("candidate grid is empty")
    ei = np.atleast_1d(expected_improvement(mean, variance, y_best))
    cost = np.broadcast_to(np.asarray(cost, dtype=float), ei.shape)
    if np.any(cost <= 0):
        raise ValueError("intervention cost must be positive")
    alpha = ei / cost
    i = int(np.argmax(alpha))
    return grid[i], float(alpha[i])


def select_set(alphas: Sequence[float]) -> int:
    """Index of the largest acquisition value (first one on ties)."""
    if len(alphas) == 0:
        raise ValueError("no intervention sets to choose from")
    return int(np.argmax(np.asarray(alphas, dtype=float)))
