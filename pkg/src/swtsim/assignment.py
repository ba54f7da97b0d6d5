"""K-best ranked assignment via Murty partitioning over an optimal solver."""

from __future__ import annotations

import heapq

import numpy as np
from scipy.optimize import linear_sum_assignment

_INF = np.inf


def _solve(cost: np.ndarray):
    """Optimal full-row assignment; returns (total cost, col per row) or None
    when infeasible."""
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError:
        return None
    total = cost[rows, cols].sum()
    if not np.isfinite(total):
        return None
    assignment = np.full(cost.shape[0], -1, dtype=int)
    assignment[rows] = cols
    return float(total), assignment


def kbest_assignments(cost: np.ndarray, k: int):
    """Up to k cheapest row-to-column assignments of a rectangular cost
    matrix, ranked by total cost. Forbidden pairings carry infinite cost.

    Every row must be assignable; duplicate column use is never produced.
    Returns a list of (total_cost, assignment array) pairs.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] > cost.shape[1]:
        raise ValueError("cost matrix must have at least as many columns as rows")
    if k < 1:
        return []
    best = _solve(cost)
    if best is None:
        return []
    counter = 0
    # queue entries: (cost, tiebreak, assignment, problem matrix)
    queue = [(best[0], counter, best[1], cost)]
    results = []
    seen = set()
    while queue and len(results) < k:
        total, _, assignment, problem = heapq.heappop(queue)
        key = tuple(assignment)
        if key in seen:
            continue
        seen.add(key)
        results.append((total, assignment))
        # Murty partition: fix the first i pairings, forbid the (i+1)-th
        fixed = problem.copy()
        for row in range(cost.shape[0]):
            child = fixed.copy()
            child[row, assignment[row]] = _INF
            sol = _solve(child)
            if sol is not None:
                counter += 1
                heapq.heappush(queue, (sol[0], counter, sol[1], child))
            # Lock this row's pairing for subsequent children.
            locked = fixed[row, assignment[row]]
            fixed[row, :] = _INF
            fixed[row, assignment[row]] = locked
    return results
