"""Dense linear algebra helpers shared by the solvers."""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from mdplab.errors import SingularSystem

PIVOT_RTOL = 1e-12


def dense_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` by LU with partial pivoting.

    Raises SingularSystem when a pivot falls below ``1e-12 * max|a|``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return np.zeros_like(b)
    scale = np.abs(a).max()
    if scale == 0.0:
        raise SingularSystem("zero matrix")
    lu, piv = sla.lu_factor(a, check_finite=True)
    if np.abs(np.diag(lu)).min() < PIVOT_RTOL * scale:
        raise SingularSystem("pivot below singularity threshold")
    return sla.lu_solve((lu, piv), b)


def adjugate(a: np.ndarray) -> np.ndarray:
    """Adjugate (classical adjoint) of a square matrix.

    Computed from the SVD so it stays well defined when ``a`` is singular,
    where ``det(a) * inv(a)`` is not.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 1:
        return np.ones((1, 1))
    u, sig, vt = np.linalg.svd(a)
    # adj(diag(sig))_ii = prod_{j != i} sig_j
    prods = np.empty(n)
    for i in range(n):
        prods[i] = np.prod(np.delete(sig, i))
    sign = np.linalg.det(u) * np.linalg.det(vt)
    # a = U S V^T  =>  adj(a) = adj(V^T) adj(S) adj(U) = det(V) V adj(S) det(U) U^T
    return sign * (vt.T * prods) @ u.T
