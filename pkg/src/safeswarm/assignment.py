"""Minimum-cost linear assignment via shortest augmenting paths."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError


def linear_sum_assignment(cost: np.ndarray) -> np.ndarray:
    """Permutation p minimizing sum(cost[i, p[i]]) over a square matrix.

    Jonker-Volgenant style column-by-row augmentation with dual potentials,
    O(n^3). Returns p as an int array with p[i] = column assigned to row i.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError(f"assignment needs a square matrix, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise DomainError("assignment cost matrix must be finite")
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)

    # 1-based columns with a virtual column 0; row_at[j] = row matched to column j
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_at = np.zeros(n + 1, dtype=np.int64)
    prev_col = np.zeros(n + 1, dtype=np.int64)

    for row in range(1, n + 1):
        row_at[0] = row
        j0 = 0
        min_reduced = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_at[j0]
            free = ~used
            free[0] = False
            reduced = cost[i0 - 1, :] - u[i0] - v[1:]
            cols = np.flatnonzero(free[1:]) + 1
            better = reduced[cols - 1] < min_reduced[cols]
            min_reduced[cols[better]] = reduced[cols[better] - 1]
            prev_col[cols[better]] = j0
            j1 = cols[np.argmin(min_reduced[cols])]
            delta = min_reduced[j1]
            u[row_at[used]] += delta
            v[used] -= delta
            min_reduced[~used] -= delta
            j0 = j1
            if row_at[j0] == 0:
                break
        while j0 != 0:
            j1 = prev_col[j0]
            row_at[j0] = row_at[j1]
            j0 = j1

    perm = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[row_at[j] - 1] = j - 1
    return perm


def assignment_cost(cost: np.ndarray, perm: np.ndarray) -> float:
    return float(np.asarray(cost)[np.arange(len(perm)), perm].sum())
