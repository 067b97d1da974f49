"""Symmetric eigendecomposition via the cyclic Jacobi rotation method."""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, ShapeError


def _off_diagonal_norm(a: np.ndarray) -> float:
    mask = ~np.eye(a.shape[0], dtype=bool)
    return float(np.sqrt((a[mask] ** 2).sum()))


def jacobi_eigh(matrix, tol: float = 1e-12, max_sweeps: int = 100
                ) -> tuple[np.ndarray, np.ndarray]:
    """Full eigendecomposition of a symmetric matrix.

    Sweeps Givens rotations over every (p, q) pair until the off-diagonal
    Frobenius norm falls below ``tol`` relative to the input norm (an absolute
    1e-12 is unreachable in float64 once entries grow past O(1)). Returns
    eigenvalues ascending and column-orthonormal eigenvectors, each column's
    largest-magnitude entry made positive for a deterministic sign.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise ShapeError("matrix is not symmetric")
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy(), np.ones((1, 1))

    work = (a + a.T) / 2.0
    vectors = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(work)))

    for _ in range(max_sweeps):
        if _off_diagonal_norm(work) <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = work[p, q]
                if apq == 0.0:
                    continue
                tau = (work[q, q] - work[p, p]) / (2.0 * apq)
                sign = 1.0 if tau >= 0.0 else -1.0
                t = sign / (abs(tau) + np.sqrt(tau * tau + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = work[:, p].copy(), work[:, q].copy()
                work[:, p] = c * col_p - s * col_q
                work[:, q] = s * col_p + c * col_q
                row_p, row_q = work[p, :].copy(), work[q, :].copy()
                work[p, :] = c * row_p - s * row_q
                work[q, :] = s * row_p + c * row_q
                vec_p, vec_q = vectors[:, p].copy(), vectors[:, q].copy()
                vectors[:, p] = c * vec_p - s * vec_q
                vectors[:, q] = s * vec_p + c * vec_q
    if _off_diagonal_norm(work) > threshold:
        raise ConvergenceError(
            f"Jacobi did not converge in {max_sweeps} sweeps "
            f"(off-diagonal norm {_off_diagonal_norm(work):.3e} > {threshold:.3e})"
        )

    values = work.diagonal().copy()
    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    for j in range(n):
        pivot = int(np.argmax(np.abs(vectors[:, j])))
        if vectors[pivot, j] < 0.0:
            vectors[:, j] = -vectors[:, j]
    return values, vectors


def connected_components(similarity: np.ndarray, threshold: float = 0.0) -> int:
    """Count connected components of the graph with edges where S > threshold."""
    s = np.asarray(similarity)
    n = s.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if s[i, j] > threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    return len({find(i) for i in range(n)})
