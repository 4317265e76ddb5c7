"""Symmetric eigensolver (cyclic Jacobi) and small dense helpers."""
from __future__ import annotations

import numpy as np

SIGN_EPS = 1e-12


class EigenError(ArithmeticError):
    pass


def _round_robin(m: int):
    """Yield the m-1 rounds of disjoint index pairs for an even ``m``."""
    order = list(range(m))
    for _ in range(m - 1):
        yield [(order[i], order[m - 1 - i]) for i in range(m // 2)]
        order = [order[0], order[-1]] + order[1:-1]


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the first entry with magnitude above 1e-12 is positive."""
    out = np.array(vectors, dtype=float, copy=True)
    for k in range(out.shape[1]):
        col = out[:, k]
        nz = np.flatnonzero(np.abs(col) > SIGN_EPS)
        if nz.size and col[nz[0]] < 0:
            out[:, k] = -col
    return out


def sym_eig(matrix, tol: float = 1e-15, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by parallel cyclic Jacobi.

    Each round applies n/2 disjoint plane rotations at once (round-robin
    ordering), which zeroes the same entries as the serial cyclic sweep.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as columns, sign-normalized by :func:`fix_signs`.
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"sym_eig needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    if not np.all(np.isfinite(a)):
        raise EigenError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a))))
    asym = float(np.max(np.abs(a - a.T)))
    if asym > 1e-10 * scale:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    a = 0.5 * (a + a.T)
    if n == 1:
        return a[0].copy(), np.ones((1, 1))

    m = n + (n % 2)
    if m != n:
        a = np.pad(a, ((0, 1), (0, 1)))
    v = np.eye(m)
    rounds = [np.array(r).T for r in _round_robin(m)]
    total = np.linalg.norm(a)
    floor = 1e-18 * total
    offdiag = ~np.eye(m, dtype=bool)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a[offdiag])
        if off <= tol * total or off == 0.0:
            break
        rotated = False
        for p, q in rounds:
            apq = a[p, q]
            app, aqq = a[p, p], a[q, q]
            # entries below roundoff of their diagonal pair are dropped, not rotated
            keep = np.abs(apq) > np.maximum(2.2e-16 * np.sqrt(np.abs(app * aqq)), floor)
            a[p[~keep], q[~keep]] = 0.0
            a[q[~keep], p[~keep]] = 0.0
            if not np.any(keep):
                continue
            rotated = True
            p, q, apq, app, aqq = p[keep], q[keep], apq[keep], app[keep], aqq[keep]
            theta = (aqq - app) / (2.0 * apq)
            big = np.abs(theta) > 1e150
            th = np.where(big, 1.0, theta)
            t = np.sign(th) / (np.abs(th) + np.sqrt(th * th + 1.0))
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        raise EigenError(f"Jacobi did not converge in {max_sweeps} sweeps")

    vals = np.diag(a)[:n].copy()
    vecs = v[:n, :n]
    order = np.argsort(vals, kind="stable")
    return vals[order], fix_signs(vecs[:, order])


def reconstruction_residual(matrix, vals, vecs) -> float:
    m = np.asarray(matrix, dtype=float)
    denom = np.linalg.norm(m)
    r = np.linalg.norm(m @ vecs - vecs * vals)
    return float(r / denom) if denom > 0 else float(r)
