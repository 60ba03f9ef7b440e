"""Small dense two-phase simplex with Bland's rule.

Intended for LPs with a few dozen variables, where a self-contained solver
with a cycling-proof pivot rule is preferable to a general-purpose one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from mdplab.errors import LpNumericalFailure

TOL = 1e-10


@dataclass(frozen=True)
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: Optional[np.ndarray]
    objective: float
    iterations: int


def _pivot(tab: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    factor = tab[:, col].copy()
    factor[row] = 0.0
    tab -= np.outer(factor, tab[row])


def _run(tab: np.ndarray, basis: list, n_cols: int, max_iter: int) -> tuple[str, int]:
    """Maximize the objective stored in the last row as reduced costs ``-c``.

    Only the first ``n_cols`` columns may enter. Bland's rule: lowest index
    entering column, ties in the ratio test go to the lowest basic index.
    """
    m = tab.shape[0] - 1
    for it in range(max_iter):
        obj = tab[-1, :n_cols]
        cand = np.flatnonzero(obj < -TOL)
        if cand.size == 0:
            return "optimal", it
        col = int(cand[0])
        colv = tab[:m, col]
        pos = colv > TOL
        if not pos.any():
            return "unbounded", it
        ratios = np.full(m, np.inf)
        ratios[pos] = tab[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + TOL * max(1.0, abs(best)))
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(tab, row, col)
        basis[row] = col
    raise LpNumericalFailure(f"simplex exceeded {max_iter} pivots")


def linprog_max(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None, bounds=None, max_iter: int = 10_000) -> LpResult:
    """Maximize ``c @ x`` subject to ``a_ub x <= b_ub``, ``a_eq x = b_eq``, ``lo <= x <= hi``.

    ``bounds`` is a sequence of finite ``(lo, hi)`` pairs (default ``(0, inf)``);
    finite upper bounds become extra inequality rows.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    if bounds is None:
        bounds = [(0.0, np.inf)] * n
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    if not np.all(np.isfinite(lo)):
        raise ValueError("lower bounds must be finite")
    if np.any(hi < lo):
        return LpResult("infeasible", None, -np.inf, 0)
    rows_ub, rhs_ub = [], []
    if a_ub is not None:
        a_ub = np.atleast_2d(np.asarray(a_ub, dtype=float))
        rows_ub.append(a_ub)
        rhs_ub.append(np.asarray(b_ub, dtype=float) - a_ub @ lo)
    fin = np.flatnonzero(np.isfinite(hi))
    if fin.size:
        rows_ub.append(np.eye(n)[fin])
        rhs_ub.append(hi[fin] - lo[fin])
    a1 = np.vstack(rows_ub) if rows_ub else np.zeros((0, n))
    b1 = np.concatenate(rhs_ub) if rhs_ub else np.zeros(0)
    if a_eq is not None:
        a2 = np.atleast_2d(np.asarray(a_eq, dtype=float))
        b2 = np.asarray(b_eq, dtype=float) - a2 @ lo
    else:
        a2, b2 = np.zeros((0, n)), np.zeros(0)
    m1, m2 = a1.shape[0], a2.shape[0]
    m = m1 + m2
    # columns: x (n), slacks (m1), artificials (m)
    a = np.zeros((m, n + m1))
    a[:m1, :n] = a1
    a[:m1, n:] = np.eye(m1)
    a[m1:, :n] = a2
    b = np.concatenate([b1, b2])
    neg = b < 0
    a[neg] *= -1
    b[neg] *= -1
    n_real = n + m1
    tab = np.zeros((m + 1, n_real + m + 1))
    tab[:m, :n_real] = a
    tab[:m, n_real : n_real + m] = np.eye(m)
    tab[:m, -1] = b
    basis = list(range(n_real, n_real + m))
    # phase 1: maximize -sum(artificials)
    tab[-1, n_real : n_real + m] = 1.0
    tab[-1] -= tab[:m].sum(axis=0)
    status, it1 = _run(tab, basis, n_real + m, max_iter)
    if -tab[-1, -1] > 1e-9 * max(1.0, np.abs(b).max(initial=0.0)):
        return LpResult("infeasible", None, -np.inf, it1)
    # drive remaining artificials out of the basis
    keep = []
    for r in range(m):
        if basis[r] >= n_real:
            nz = np.flatnonzero(np.abs(tab[r, :n_real]) > TOL)
            if nz.size:
                _pivot(tab, r, int(nz[0]))
                basis[r] = int(nz[0])
            else:
                continue  # redundant row
        keep.append(r)
    tab = np.vstack([tab[keep][:, list(range(n_real)) + [-1]], np.zeros(n_real + 1)])
    basis = [basis[r] for r in keep]
    # phase 2
    cost = np.zeros(n_real)
    cost[:n] = c
    tab[-1, :n_real] = -cost
    for r, j in enumerate(basis):
        tab[-1] += cost[j] * tab[r]
    status, it2 = _run(tab, basis, n_real, max_iter)
    if status == "unbounded":
        return LpResult("unbounded", None, np.inf, it1 + it2)
    xs = np.zeros(n_real)
    for r, j in enumerate(basis):
        xs[j] = tab[r, -1]
    x = lo + xs[:n]
    return LpResult("optimal", x, float(c @ x), it1 + it2)
