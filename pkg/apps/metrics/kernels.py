"""Compiled dynamic programs for DTW with a squared-difference local cost."""

import numpy as np
from numba import njit


@njit(cache=True)
def dtw_table(x, y, lo, hi):
    """Accumulated cost table restricted to columns lo[i]..hi[i] of each row; cells outside stay inf."""
    n = x.shape[0]
    m = y.shape[0]
    table = np.full((n, m), np.inf)
    for i in range(n):
        for j in range(lo[i], hi[i] + 1):
            cost = (x[i] - y[j]) ** 2
            if i == 0 and j == 0:
                table[i, j] = cost
                continue
            best = np.inf
            if i > 0 and table[i - 1, j] < best:
                best = table[i - 1, j]
            if j > 0 and table[i, j - 1] < best:
                best = table[i, j - 1]
            if i > 0 and j > 0 and table[i - 1, j - 1] < best:
                best = table[i - 1, j - 1]
            table[i, j] = cost + best
    return table


@njit(cache=True)
def warp_path(table):
    """Backtrack from the last cell to (0, 0); ties prefer the diagonal."""
    n, m = table.shape
    path = np.empty((n + m - 1, 2), dtype=np.int64)
    i = n - 1
    j = m - 1
    k = 0
    path[0, 0] = i
    path[0, 1] = j
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diagonal = table[i - 1, j - 1]
            up = table[i - 1, j]
            left = table[i, j - 1]
            if diagonal <= up and diagonal <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        k += 1
        path[k, 0] = i
        path[k, 1] = j
    return path[: k + 1][::-1].copy()
