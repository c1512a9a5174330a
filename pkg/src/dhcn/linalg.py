"""Dense float64 linear algebra helpers.

Matrices are plain 2-d ``numpy.ndarray`` objects of dtype float64. Every
public function validates shapes, never mutates its inputs and scans its
result for non-finite entries.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, ShapeError

__all__ = [
    "as_matrix",
    "matmul",
    "transpose",
    "sym_eig",
    "frobenius_norm",
    "check_finite",
]

_SYM_TOL = 1e-9
_JACOBI_REL_TOL = 1e-12
_JACOBI_MAX_SWEEPS = 100


def check_finite(a, what="result"):
    """Raise :class:`NumericalError` if ``a`` holds NaN or Inf."""
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{what} contains non-finite values")
    return a


def as_matrix(a, name="matrix"):
    """Return ``a`` as a 2-d float64 array (a copy is made only if needed)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-d, got shape {m.shape}")
    return m


def matmul(a, b):
    """Matrix product ``a @ b`` with an explicit shape check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return check_finite(a @ b, "matmul")


def transpose(a):
    return np.ascontiguousarray(as_matrix(a).T)


def frobenius_norm(a):
    a = as_matrix(a)
    return float(check_finite(np.sqrt(np.sum(a * a)), "frobenius_norm"))


def _round_robin(m):
    """Yield ``m - 1`` (or ``m``) rounds of disjoint index pairs covering all pairs once."""
    idx = list(range(m))
    if m % 2:
        idx.append(-1)  # bye
    k = len(idx)
    for _ in range(k - 1):
        ps, qs = [], []
        for i in range(k // 2):
            p, q = idx[i], idx[k - 1 - i]
            if p >= 0 and q >= 0:
                ps.append(min(p, q))
                qs.append(max(p, q))
        if ps:
            yield np.array(ps), np.array(qs)
        idx = [idx[0], idx[-1]] + idx[1:-1]


def _offdiag_norm(a):
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.sqrt(np.sum(off * off)))


def sym_eig(a):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations are applied in round-robin order so that each round acts on
    disjoint index pairs; those rotations commute and are applied together.
    Iteration stops when the off-diagonal Frobenius mass falls below
    ``1e-12`` times its initial value, or after 100 sweeps.

    Parameters
    ----------
    a : array_like, shape (m, m)
        Symmetric within ``1e-9`` (scaled by the largest entry); it is
        symmetrized by averaging with its transpose first.

    Returns
    -------
    eigenvalues : ndarray, shape (m,)
        Sorted in descending order.
    eigenvectors : ndarray, shape (m, m)
        Orthonormal columns; column ``i`` pairs with ``eigenvalues[i]``.
    """
    a = as_matrix(a, "a")
    m, k = a.shape
    if m != k:
        raise ShapeError(f"sym_eig needs a square matrix, got {m}x{k}")
    check_finite(a, "sym_eig input")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > _SYM_TOL * scale:
        raise ShapeError("sym_eig needs a symmetric matrix")
    work = 0.5 * (a + a.T)
    vecs = np.eye(m)
    off0 = _offdiag_norm(work)
    if m > 1 and off0 > 0.0:
        target = _JACOBI_REL_TOL * off0
        rounds = list(_round_robin(m))
        for _ in range(_JACOBI_MAX_SWEEPS):
            for p, q in rounds:
                apq = work[p, q]
                live = apq != 0.0
                if not np.any(live):
                    continue
                theta = np.where(live, (work[q, q] - work[p, p]) / (2.0 * np.where(live, apq, 1.0)), 0.0)
                big = np.abs(theta) > 1e150  # theta**2 would overflow
                safe = np.where(big, 1.0, theta)
                t = np.where(big, 0.5 / np.where(big, theta, 1.0),
                             np.sign(safe) / (np.abs(safe) + np.sqrt(safe * safe + 1.0)))
                t = np.where(live, t, 0.0)
                t = np.where(live & (theta == 0.0), 1.0, t)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = work[p, :].copy(), work[q, :].copy()
                work[p, :] = c[:, None] * rp - s[:, None] * rq
                work[q, :] = s[:, None] * rp + c[:, None] * rq
                cp, cq = work[:, p].copy(), work[:, q].copy()
                work[:, p] = cp * c - cq * s
                work[:, q] = cp * s + cq * c
                vp, vq = vecs[:, p].copy(), vecs[:, q].copy()
                vecs[:, p] = vp * c - vq * s
                vecs[:, q] = vp * s + vq * c
            if _offdiag_norm(work) <= target:
                break
    vals = np.diag(work).copy()
    order = np.argsort(-vals, kind="stable")
    return check_finite(vals[order]), check_finite(np.ascontiguousarray(vecs[:, order]))
