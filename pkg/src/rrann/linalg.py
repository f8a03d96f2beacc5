"""Dense linear algebra kernels.

Matrices are plain float32 numpy arrays in row-major (C) order. Heavier
routines (QR, eigh, small dense SVD) are delegated to LAPACK through numpy;
the randomized truncated SVD sketch loop is implemented here. All routines
are pure functions and deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError, ShapeError

F32 = np.float32

DEFAULT_OVERSAMPLE = 10
DEFAULT_POWER_ITERS = 2


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float32 C-order array, rejecting non-finite entries."""
    m = np.ascontiguousarray(a, dtype=F32)
    if m.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D array, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise DataError(f"{name}: contains non-finite entries")
    return m


@dataclass(frozen=True)
class SvdFactors:
    """Truncated SVD factors: u (n x r), singular_values (r,), v (m x r)."""

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return self.singular_values.shape[0]


def matmul(a, b) -> np.ndarray:
    """Matrix product with a shape check; float32 output."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ ({a.shape} x {b.shape})")
    return np.matmul(a, b)


def randomized_svd(
    m,
    rank: int,
    oversample: int = DEFAULT_OVERSAMPLE,
    power_iters: int = DEFAULT_POWER_ITERS,
    seed: int = 0,
) -> SvdFactors:
    """Truncated SVD via a seeded Gaussian sketch with subspace iteration.

    Sketch width is rank + oversample (clamped to the small dimension); each
    power iteration re-orthonormalizes with QR to avoid losing the small
    singular directions to roundoff.
    """
    m = as_matrix(m, "m")
    n_rows, n_cols = m.shape
    if rank < 1:
        raise ParameterError(f"randomized_svd: rank must be >= 1, got {rank}")
    if rank > min(n_rows, n_cols):
        raise ParameterError(
            f"randomized_svd: rank {rank} exceeds min dimension {min(n_rows, n_cols)}"
        )
    if oversample < 0:
        raise ParameterError("randomized_svd: oversample must be >= 0")

    k = min(rank + oversample, n_cols, n_rows)
    rng = np.random.default_rng(seed)
    work = m.astype(np.float64)
    omega = rng.standard_normal((n_cols, k))
    q, _ = np.linalg.qr(work @ omega)
    for _ in range(power_iters):
        q, _ = np.linalg.qr(work.T @ q)
        q, _ = np.linalg.qr(work @ q)
    b = q.T @ work
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    u = q @ ub
    return SvdFactors(
        u=u[:, :rank].astype(F32),
        singular_values=s[:rank].astype(F32),
        v=vt[:rank].T.astype(F32),
    )


def pseudoinverse(m, rcond: float = 1e-5) -> np.ndarray:
    """Moore-Penrose pseudoinverse; singular values below rcond * sigma_max are dropped."""
    m = as_matrix(m, "m")
    u, s, vt = np.linalg.svd(m.astype(np.float64), full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((m.shape[1], m.shape[0]), dtype=F32)
    keep = s > rcond * s[0]
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return ((vt.T * inv) @ u.T).astype(F32)


def random_rotation(dim: int, seed: int = 0) -> np.ndarray:
    """Seeded random orthogonal matrix: QR of a Gaussian, sign-fixed so R's diagonal is positive."""
    if dim < 1:
        raise ParameterError(f"random_rotation: dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    return q.astype(F32)


def top_eigenvectors(gram_source, s: int, seed: int = 0) -> np.ndarray:
    """Top-s right singular vectors of an n x d matrix, as a d x s column matrix.

    Equivalent to the leading eigenvectors of the d x d Gram matrix. Small
    problems use a dense eigendecomposition of the Gram; when s is far below
    d the seeded randomized sketch is cheaper and is used instead.
    """
    x = as_matrix(gram_source, "gram_source")
    n_rows, d = x.shape
    if s < 1:
        raise ParameterError(f"top_eigenvectors: s must be >= 1, got {s}")
    if s > d:
        raise ParameterError(f"top_eigenvectors: s {s} exceeds column count {d}")

    if s <= min(n_rows, d) // 4:
        return randomized_svd(x, rank=s, power_iters=4, seed=seed).v

    gram = x.astype(np.float64).T @ x.astype(np.float64)
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1][:s]
    w = evecs[:, order]
    # canonical sign: largest-magnitude component of each column is positive
    idx = np.argmax(np.abs(w), axis=0)
    signs = np.sign(w[idx, np.arange(s)])
    signs[signs == 0] = 1.0
    return (w * signs).astype(F32)
