"""Linear assignment and permutation enumeration."""

from __future__ import annotations

import math
from functools import lru_cache
from itertools import permutations

import numpy as np

from ..exceptions import DataFormatError, NumericalError

MAX_ASSIGNMENT_K = 64
MAX_ENUMERATION_K = 8


@lru_cache(maxsize=None)
def _all_permutations(K: int) -> np.ndarray:
    perms = np.array(list(permutations(range(K))), dtype=np.intp).reshape(-1, K)
    perms.setflags(write=False)
    return perms


def all_permutations(K: int) -> np.ndarray:
    """Every permutation of ``0..K-1`` in lexicographic order, shape (K!, K)."""
    if K > MAX_ENUMERATION_K:
        raise DataFormatError(
            f"exhaustive search over {K}! = {math.factorial(K)} permutations refused; "
            f"limit is K <= {MAX_ENUMERATION_K}")
    return _all_permutations(K)


def _solve(a: list, n: int) -> list:
    # Shortest augmenting path with row/column potentials, O(n^3).
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
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
    assign = [0] * n
    for j in range(1, n + 1):
        if p[j]:
            assign[p[j] - 1] = j - 1
    return assign


def _optimum(a: list, rows: list, cols: list) -> tuple:
    sub = [[a[r][c] for c in cols] for r in rows]
    if not rows:
        return 0.0, []
    assign = _solve(sub, len(rows))
    return sum(sub[i][assign[i]] for i in range(len(rows))), [cols[c] for c in assign]


def hungarian(cost, tie_break: str = "lex") -> np.ndarray:
    """Column permutation ``nu`` minimising ``sum_h cost[h, nu[h]]``.

    With ``tie_break="lex"`` the lexicographically smallest optimal
    permutation is returned, which makes the output independent of the
    solver's internal visiting order.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DataFormatError(f"cost matrix must be square, got shape {cost.shape}")
    K = cost.shape[0]
    if K > MAX_ASSIGNMENT_K:
        raise DataFormatError(f"assignment size {K} exceeds limit {MAX_ASSIGNMENT_K}")
    if not np.all(np.isfinite(cost)):
        raise NumericalError("cost matrix contains non-finite entries")
    if K == 0:
        return np.zeros(0, dtype=np.intp)
    a = cost.tolist()
    current = _solve(a, K)
    if tie_break != "lex":
        return np.array(current, dtype=np.intp)
    best = sum(a[h][current[h]] for h in range(K))
    tol = 1e-12 * K * max(1.0, abs(best), float(np.abs(cost).max()))

    # Fix rows in order, taking the smallest column that still admits an optimum.
    fixed = 0.0
    free_cols = list(range(K))
    result = []
    for h in range(K):
        rest_rows = list(range(h + 1, K))
        chosen = current[h]
        for j in free_cols:
            if j >= current[h]:
                break
            cols = [c for c in free_cols if c != j]
            val, tail = _optimum(a, rest_rows, cols)
            if fixed + a[h][j] + val <= best + tol:
                chosen = j
                current = current[:h] + [j] + tail
                break
        result.append(chosen)
        fixed += a[h][chosen]
        free_cols.remove(chosen)
    return np.array(result, dtype=np.intp)


def assignment_cost(cost, nu) -> float:
    cost = np.asarray(cost, dtype=float)
    return float(cost[np.arange(cost.shape[0]), np.asarray(nu)].sum())


def best_permutations(D: np.ndarray, maximize: bool = False, chunk: int = 2048) -> np.ndarray:
    """Optimal permutation for each stacked K x K matrix in ``D`` (M, K, K).

    Entry ``D[j, k, c]`` is the score of placing input block ``c`` at output
    position ``k`` for draw ``j``.  Uses exhaustive lexicographic enumeration
    for K <= 8 (ties go to the earliest permutation) and the assignment
    solver otherwise.
    """
    D = np.asarray(D, dtype=float)
    M, K, _ = D.shape
    if K <= MAX_ENUMERATION_K:
        P = all_permutations(K)
        rows = np.arange(K)
        out = np.empty((M, K), dtype=np.intp)
        step = max(1, chunk * 720 // max(1, P.shape[0]))
        for start in range(0, M, step):
            scores = D[start:start + step][:, rows, P].sum(axis=-1)
            idx = np.argmax(scores, axis=1) if maximize else np.argmin(scores, axis=1)
            out[start:start + step] = P[idx]
        return out
    sign = -1.0 if maximize else 1.0
    return np.stack([hungarian(sign * D[j]) for j in range(M)])
