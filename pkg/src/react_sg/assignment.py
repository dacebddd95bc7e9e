"""Rectangular linear sum assignment.

``solve_lsa`` is a shortest-augmenting-path solver in the Jonker-Volgenant
family, started without any initialization: every row of the smaller side
is augmented in index order through a Dijkstra search on reduced costs.
Forbidden pairs are ``+inf`` entries and are never selected.
"""

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    InfeasibleAssignmentError,
    SizeLimitError,
)

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 8


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]
    total_cost: float


def as_cost_matrix(cost: object) -> np.ndarray:
    matrix = np.asarray(cost, dtype=float)
    if matrix.ndim != 2:  # noqa: PLR2004
        msg = f"Cost matrix must be 2-D, got shape {matrix.shape}"
        raise DimensionMismatchError(msg)
    if np.isnan(matrix).any():
        msg = "Cost matrix contains NaN"
        raise DimensionMismatchError(msg)
    if np.isneginf(matrix).any():
        msg = "Cost matrix contains -inf"
        raise DimensionMismatchError(msg)
    return matrix


def _infeasible(shape: tuple[int, ...]) -> InfeasibleAssignmentError:
    msg = f"No complete assignment exists for the {shape} cost matrix"
    return InfeasibleAssignmentError(msg)


def _finish(matrix: np.ndarray, pairs: list[tuple[int, int]]) -> Assignment:
    pairs = sorted(pairs)
    total = math.fsum(matrix[r, c] for r, c in pairs)
    return Assignment(pairs=tuple(pairs), total_cost=total)


def _augment(
    cost: np.ndarray,
    cur_row: int,
    u: np.ndarray,
    v: np.ndarray,
    row4col: np.ndarray,
) -> tuple[int, float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Dijkstra search from ``cur_row`` to the nearest free column."""
    n_cols = cost.shape[1]
    shortest = np.full(n_cols, np.inf)
    path = np.full(n_cols, -1, dtype=int)
    scanned_rows = np.zeros(cost.shape[0], dtype=bool)
    scanned_cols = np.zeros(n_cols, dtype=bool)

    min_val = 0.0
    row = cur_row
    while True:
        scanned_rows[row] = True
        reduced = min_val + cost[row] - u[row] - v
        improved = ~scanned_cols & (reduced < shortest)
        path[improved] = row
        shortest[improved] = reduced[improved]

        candidates = np.where(scanned_cols, np.inf, shortest)
        lowest = candidates.min()
        if not math.isfinite(lowest):
            return -1, lowest, shortest, path, scanned_rows, scanned_cols
        ties = np.flatnonzero(~scanned_cols & (shortest == lowest))
        free = ties[row4col[ties] == -1]
        col = int(free[0]) if free.size else int(ties[0])

        min_val = lowest
        scanned_cols[col] = True
        if row4col[col] == -1:
            return col, min_val, shortest, path, scanned_rows, scanned_cols
        row = int(row4col[col])


def _solve_wide(cost: np.ndarray) -> list[tuple[int, int]]:
    """Assign every row of a matrix with rows <= cols."""
    n_rows, n_cols = cost.shape
    u = np.zeros(n_rows)
    v = np.zeros(n_cols)
    row4col = np.full(n_cols, -1, dtype=int)
    col4row = np.full(n_rows, -1, dtype=int)

    for cur_row in range(n_rows):
        sink, min_val, shortest, path, scanned_rows, scanned_cols = _augment(
            cost, cur_row, u, v, row4col
        )
        if sink < 0:
            raise _infeasible(cost.shape)

        u[cur_row] += min_val
        others = np.flatnonzero(scanned_rows)
        others = others[others != cur_row]
        u[others] += min_val - shortest[col4row[others]]
        v[scanned_cols] -= min_val - shortest[scanned_cols]

        col = sink
        while True:
            row = int(path[col])
            row4col[col] = row
            col4row[row], col = col, int(col4row[row])
            if row == cur_row:
                break

    return [(r, int(col4row[r])) for r in range(n_rows)]


def solve_lsa(cost: object) -> Assignment:
    """Minimum-cost assignment of every element of the smaller side."""
    matrix = as_cost_matrix(cost)
    n_rows, n_cols = matrix.shape
    if n_rows == 0 or n_cols == 0:
        return Assignment(pairs=(), total_cost=0.0)

    if n_rows <= n_cols:
        pairs = _solve_wide(matrix)
    else:
        pairs = [(r, c) for c, r in _solve_wide(matrix.T)]
    result = _finish(matrix, pairs)
    logger.debug(
        "solved %dx%d assignment, cost %.6f", n_rows, n_cols, result.total_cost
    )
    return result


def solve_lsa_partial(cost: object) -> Assignment:
    """Largest feasible matching of minimum cost.

    Each row may instead take a private dummy column whose penalty exceeds
    any admissible total, so forbidden entries leave rows unmatched rather
    than making the problem infeasible.
    """
    matrix = as_cost_matrix(cost)
    n_rows, n_cols = matrix.shape
    if n_rows == 0 or n_cols == 0:
        return Assignment(pairs=(), total_cost=0.0)
    finite = matrix[np.isfinite(matrix)]
    spread = float(np.abs(finite).max()) if finite.size else 0.0
    penalty = spread * (2 * min(n_rows, n_cols) + 1) + 1.0
    dummy = np.full((n_rows, n_rows), np.inf)
    np.fill_diagonal(dummy, penalty)
    padded = solve_lsa(np.hstack([matrix, dummy]))
    pairs = [(r, c) for r, c in padded.pairs if c < n_cols]
    return _finish(matrix, pairs)


def brute_force_lsa(cost: object) -> Assignment:
    """Exhaustive reference solver over injections of the smaller side."""
    matrix = as_cost_matrix(cost)
    n_rows, n_cols = matrix.shape
    if min(n_rows, n_cols) > BRUTE_FORCE_LIMIT:
        msg = (
            f"Brute force supports at most {BRUTE_FORCE_LIMIT} assignments, "
            f"got a {n_rows}x{n_cols} matrix"
        )
        raise SizeLimitError(msg)
    if n_rows == 0 or n_cols == 0:
        return Assignment(pairs=(), total_cost=0.0)

    transposed = n_rows > n_cols
    work = matrix.T if transposed else matrix
    rows = range(work.shape[0])
    best_cost = math.inf
    best_cols: tuple[int, ...] | None = None
    for cols in itertools.permutations(range(work.shape[1]), work.shape[0]):
        total = math.fsum(work[r, c] for r, c in zip(rows, cols))
        if total < best_cost:
            best_cost, best_cols = total, cols
    if best_cols is None:
        raise _infeasible(matrix.shape)

    pairs = list(zip(rows, best_cols))
    if transposed:
        pairs = [(r, c) for c, r in pairs]
    return _finish(matrix, pairs)
