"""Self-contained symmetric linear algebra helpers.

The eigensolver is a cyclic Jacobi iteration: the matrices in this package
are small (K <= 64 network mixers, M <= ~16 Hessians), and Jacobi is
unconditionally convergent on symmetric input while leaving us in full
control of eigenvalue ordering conventions.
"""

from __future__ import annotations

import numpy as np

from .exceptions import NonConvergenceError

JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 100


def _off_diag_frobenius(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def jacobi_eigh(matrix: np.ndarray, tol: float = JACOBI_TOL,
                max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, vectors)`` with ``matrix = vectors @ diag(w) @ vectors.T``,
    eigenvalues unordered (callers sort). Raises :class:`NonConvergenceError`
    if the off-diagonal Frobenius norm does not fall below ``tol`` (relative
    to the input Frobenius norm) within ``max_sweeps`` sweeps.
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("jacobi_eigh expects a square matrix")
    if not np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError("jacobi_eigh expects a symmetric matrix")
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return np.array([a[0, 0]]), v
    scale = max(1.0, float(np.linalg.norm(a)))
    converged = False
    for _ in range(max_sweeps):
        if _off_diag_frobenius(a) <= tol * scale:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                # stable rotation angle: t = tan(theta)
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                a[p, q] = a[q, p] = 0.0
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    if not converged and _off_diag_frobenius(a) > tol * scale:
        raise NonConvergenceError(
            f"Jacobi sweep budget ({max_sweeps}) exhausted: "
            f"off-diagonal norm {_off_diag_frobenius(a):.3e}")
    return np.diag(a).copy(), v


def sorted_eigh(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jacobi eigendecomposition sorted by descending eigenvalue magnitude.

    Ties in magnitude break by descending signed value.
    """
    w, v = jacobi_eigh(matrix)
    order = np.lexsort((-w, -np.abs(w)))
    return w[order], v[:, order]


def householder_basis(vec: np.ndarray) -> np.ndarray:
    """Orthogonal matrix whose first column is ``vec / ||vec||``.

    Built from a single Householder reflection, so the remaining columns
    form an exact orthonormal completion.
    """
    x = np.asarray(vec, dtype=float)
    n = x.size
    x = x / np.linalg.norm(x)
    e1 = np.zeros(n)
    e1[0] = 1.0
    u = x - e1 if x[0] >= 0 else x + e1
    nu = np.linalg.norm(u)
    if nu < 1e-300:
        return np.eye(n)
    u = u / nu
    q = np.eye(n) - 2.0 * np.outer(u, u)
    # reflection maps e1 to +/-x; flip so the first column is exactly +x
    if np.dot(q[:, 0], x) < 0:
        q = -q
    return q


def spectral_norm(matrix: np.ndarray, tol: float = 1e-12,
                  max_iter: int = 10_000) -> float:
    """Largest eigenvalue magnitude of a symmetric matrix, by power iteration."""
    a = np.asarray(matrix, dtype=float)
    n = a.shape[0]
    if n == 0:
        return 0.0
    v = np.full(n, 1.0 / np.sqrt(n))
    v[::2] += 1e-3  # break symmetry against unlucky orthogonal starts
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(max_iter):
        av = a @ v
        norm = np.linalg.norm(av)
        if norm == 0.0:
            return 0.0
        v = av / norm
        if abs(norm - prev) <= tol * max(1.0, norm):
            return float(norm)
        prev = norm
    raise NonConvergenceError("power iteration for spectral norm did not converge")


def symmetric_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix."""
    w, v = sorted_eigh(matrix)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def covariance_factor(cov: np.ndarray) -> np.ndarray:
    """Factor L with L @ L.T = cov, for sampling Gaussian noise.

    Cholesky when positive definite, symmetric eigen square root otherwise
    (covariances may be singular).
    """
    c = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        return symmetric_sqrt(c)
