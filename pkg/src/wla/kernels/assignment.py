"""Linear assignment with a deterministic lexicographic tie-break.

The core solver is the O(n^3) Hungarian algorithm on row/column potentials
with shortest augmenting paths. On top of it, ``solve_assignment`` refines the
answer so that among all minimum-cost permutations the one with the
lexicographically smallest (row0_col, row1_col, ...) tuple is returned. That
makes results reproducible across platforms regardless of float tie ordering
inside the solver.
"""

import numpy as np

from . import USE_NUMBA, jit

_INF = 1e18


def _hungarian_loop(cost):
    """Row->col assignment minimizing total cost. cost: [n, n] float64."""
    n = cost.shape[0]
    u = np.zeros(n + 1, np.float64)
    v = np.zeros(n + 1, np.float64)
    p = np.zeros(n + 1, np.int64)  # p[j]: row matched to column j, 0 = free
    way = np.zeros(n + 1, np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, _INF, np.float64)
        used = np.zeros(n + 1, np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = _INF
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.zeros(n, np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col


def _hungarian_np(cost):
    """Same algorithm with the inner column scan vectorized."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, np.int64)
    way = np.zeros(n + 1, np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, _INF)
        used = np.zeros(n + 1, np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            masked = np.where(free, minv[1:], _INF)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.zeros(n, np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col


_hungarian_jit = jit(_hungarian_loop)
_hungarian = _hungarian_jit if USE_NUMBA else _hungarian_np


def assignment_cost(cost, perm):
    return float(np.asarray(cost, np.float64)[np.arange(len(perm)), perm].sum())


def solve_assignment(cost):
    """Minimum-cost row->col permutation, lexicographically smallest on ties.

    For each row in order, the smallest column index is chosen whose optimal
    completion still attains the global optimum (within a relative 1e-9
    tolerance to absorb float roundoff).
    """
    cost = np.ascontiguousarray(cost, np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError(f"cost must be square, got {cost.shape}")
    if n == 0:
        return np.zeros(0, np.int64)
    if n == 1:
        return np.zeros(1, np.int64)
    best = assignment_cost(cost, _hungarian(cost))
    tol = 1e-9 * (1.0 + abs(best))
    perm = np.full(n, -1, np.int64)
    col_free = np.ones(n, np.bool_)
    fixed = 0.0
    for r in range(n):
        rows_left = np.arange(r + 1, n)
        for c in range(n):
            if not col_free[c]:
                continue
            cand = fixed + cost[r, c]
            if rows_left.size:
                cols_left = np.flatnonzero(col_free & (np.arange(n) != c))
                sub = np.ascontiguousarray(cost[np.ix_(rows_left, cols_left)])
                cand += assignment_cost(sub, _hungarian(sub))
            if cand <= best + tol:
                perm[r] = c
                col_free[c] = False
                fixed += cost[r, c]
                break
    return perm


def solve_assignment_batch(costs):
    """[B, n, n] -> [B, n] int64, one lexicographic-min assignment per item."""
    costs = np.asarray(costs, np.float64)
    out = np.zeros(costs.shape[:2], np.int64)
    for b in range(costs.shape[0]):
        out[b] = solve_assignment(costs[b])
    return out
