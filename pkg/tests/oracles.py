"""Independent reference implementations used only by tests.

These deliberately avoid the code paths they check: matrix products are
triple loops, the dense SVD is one-sided Jacobi (no LAPACK), the integer
kernel is a plain signed loop, and exact k-NN is a per-query double loop.
"""

from __future__ import annotations

import numpy as np


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def jacobi_svd(m: np.ndarray, max_sweeps: int = 60, tol: float = 1e-14):
    """One-sided Jacobi SVD of an n x k matrix (n >= k after transpose).

    Returns (u, s, v) with m ~= u @ diag(s) @ v.T, singular values descending.
    """
    a = np.array(m, dtype=np.float64)
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T
    n, k = a.shape
    v = np.eye(k)
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(k - 1):
            for q in range(p + 1, k):
                alpha = a[:, p] @ a[:, p]
                beta = a[:, q] @ a[:, q]
                gamma = a[:, p] @ a[:, q]
                off = max(off, abs(gamma) / max(np.sqrt(alpha * beta), 1e-300))
                if abs(gamma) < tol * np.sqrt(alpha * beta):
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if off < tol:
            break
    sigma = np.sqrt((a * a).sum(axis=0))
    order = np.argsort(sigma)[::-1]
    sigma = sigma[order]
    a = a[:, order]
    v = v[:, order]
    u = np.zeros_like(a)
    nz = sigma > 0
    u[:, nz] = a[:, nz] / sigma[nz]
    if transposed:
        return v, sigma, u
    return u, sigma, v


def naive_int8_gemv(x_codes: np.ndarray, m_codes: np.ndarray) -> np.ndarray:
    rows, cols = m_codes.shape
    assert x_codes.shape[0] == rows
    out = np.zeros(cols, dtype=np.int64)
    for j in range(cols):
        acc = 0
        for i in range(rows):
            acc += int(x_codes[i]) * int(m_codes[i, j])
        out[j] = acc
    return out.astype(np.int32)


def signed_gemv(x_codes: np.ndarray, m_codes: np.ndarray) -> np.ndarray:
    """Vectorized version of the signed loop; exact in int64, cast at the end."""
    return (x_codes.astype(np.int64) @ m_codes.astype(np.int64)).astype(np.int32)


def knn_double_loop(corpus: np.ndarray, queries: np.ndarray, k: int, metric: str) -> np.ndarray:
    m = corpus.shape[0]
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    c = corpus.astype(np.float64)
    if metric == "cosine":
        norms = np.sqrt((c * c).sum(axis=1))
        norms[norms == 0] = 1.0
        c = c / norms[:, None]
    for qi in range(queries.shape[0]):
        q = queries[qi].astype(np.float64)
        diss = np.empty(m)
        for j in range(m):
            if metric == "euclidean":
                d = q - c[j]
                diss[j] = d @ d
            else:
                diss[j] = -(q @ c[j])
        order = np.argsort(diss, kind="stable")
        out[qi] = order[:k]
    return out


def det_cofactor(m: np.ndarray) -> float:
    n = m.shape[0]
    if n == 1:
        return float(m[0, 0])
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(m, 0, axis=0), j, axis=1)
        total += ((-1.0) ** j) * float(m[0, j]) * det_cofactor(minor)
    return total


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman rank correlation without scipy."""
    ra = np.argsort(np.argsort(a)).astype(np.float64)
    rb = np.argsort(np.argsort(b)).astype(np.float64)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    return float((ra * rb).sum() / denom) if denom > 0 else 1.0
