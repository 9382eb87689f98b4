"""Optimal linear sum assignment (Jonker-Volgenant shortest augmenting path).

O(n^3) with dual potentials; rows and columns are 1-indexed internally with
a virtual column 0 anchoring each augmentation.
"""

from __future__ import annotations

import numpy as np


def hungarian(cost) -> np.ndarray:
    """Column index assigned to each row, minimizing the total cost.

    The cost matrix must be square and finite; returns a permutation array
    `perm` with total cost `cost[np.arange(n), perm].sum()` minimal.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)  # 0 = unassigned
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used
            free[0] = False
            cols = np.nonzero(free)[0]
            cur = cost[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols]
            if np.any(better):
                improved = cols[better]
                minv[improved] = cur[better]
                way[improved] = j0
            j0 = cols[np.argmin(minv[cols])]
            delta = minv[j0]
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            if row_of_col[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    perm[row_of_col[1:] - 1] = np.arange(n)
    return perm
