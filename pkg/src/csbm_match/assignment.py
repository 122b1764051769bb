"""Square linear assignment.

Both solvers return a :class:`Permutation` sigma read column-wise: column ``j`` is
assigned row ``sigma(j)``, and the objective is ``sum_j c[sigma(j), j]``.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment

from .graph import Permutation


def _check(c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix has non-finite entries")
    return c


def solve_lap_min(c) -> Permutation:
    c = _check(c)
    rows, cols = linear_sum_assignment(c)
    fwd = np.empty(c.shape[0], dtype=np.int64)
    fwd[cols] = rows
    return Permutation(fwd)


def solve_lap_max(c) -> Permutation:
    return solve_lap_min(-_check(c))


def assignment_cost(c, sigma: Permutation) -> float:
    c = np.asarray(c, dtype=float)
    return float(c[sigma.forward, np.arange(sigma.n)].sum())


def brute_force_min(c) -> tuple[float, Permutation]:
    """Exhaustive minimum over all n! assignments; for tests with n <= 8."""
    c = _check(c)
    n = c.shape[0]
    if n > 9:
        raise ValueError("brute force is limited to n <= 9")
    best, best_sigma = np.inf, None
    cols = np.arange(n)
    for perm in itertools.permutations(range(n)):
        cost = c[list(perm), cols].sum()
        if cost < best:
            best, best_sigma = cost, perm
    if best_sigma is None:
        return 0.0, Permutation.identity(0)
    return float(best), Permutation(best_sigma)
