"""Cyclic Jacobi eigensolver for small dense symmetric matrices."""

from __future__ import annotations

import numpy as np


def jacobi_eigh(a, tol: float = 1e-15, max_sweeps: int = 64):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigvals, eigvecs)`` with eigenvalues in descending order and
    eigenvectors as orthonormal columns. Intended for ``n <= 64``; every sweep
    touches all ``n (n - 1) / 2`` off-diagonal pairs.

    Parameters
    ----------
    a : array_like, shape (n, n)
        Symmetric input. Only the symmetric part ``(a + a.T) / 2`` is used.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm falls below
        ``tol`` times the Frobenius norm of ``a``.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if n > 1 and scale > 0:
        for _ in range(max_sweeps):
            off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
            if off <= tol * scale:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if apq == 0.0:
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                    t = np.copysign(1.0, theta) / (abs(theta) + np.hypot(1.0, theta))
                    c = 1.0 / np.hypot(1.0, t)
                    s = t * c
                    ap = a[:, p].copy()
                    aq = a[:, q].copy()
                    a[:, p] = c * ap - s * aq
                    a[:, q] = s * ap + c * aq
                    ap = a[p, :].copy()
                    aq = a[q, :].copy()
                    a[p, :] = c * ap - s * aq
                    a[q, :] = s * ap + c * aq
                    a[p, q] = a[q, p] = 0.0
                    vp = v[:, p].copy()
                    vq = v[:, q].copy()
                    v[:, p] = c * vp - s * vq
                    v[:, q] = s * vp + c * vq
        else:
            raise np.linalg.LinAlgError("Jacobi iteration did not converge")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]
