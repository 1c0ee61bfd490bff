"""Factored low-rank blocks ``X @ Y.T`` and their recompression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

# sums whose leading singular value is this small relative to the operands are zero
CANCEL_TOL = 64 * np.finfo(float).eps


@dataclass
class RkMatrix:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, float).reshape(self.X.shape[0], -1)
        self.Y = np.asarray(self.Y, float).reshape(self.Y.shape[0], -1)
        if self.X.shape[1] != self.Y.shape[1]:
            raise ValueError(f"factor ranks differ: {self.X.shape[1]} vs {self.Y.shape[1]}")

    @classmethod
    def zeros(cls, rows, cols):
        return cls(np.zeros((rows, 0)), np.zeros((cols, 0)))

    @property
    def rank(self) -> int:
        return self.X.shape[1]

    @property
    def shape(self):
        return self.X.shape[0], self.Y.shape[0]

    def dense(self) -> np.ndarray:
        return self.X @ self.Y.T

    def __neg__(self):
        return RkMatrix(-self.X, self.Y)

    def nbytes(self) -> int:
        return 8 * self.rank * (self.X.shape[0] + self.Y.shape[0])


def truncation_rank(s: np.ndarray, eps_rel=None, k_max=None, scale=0.0) -> int:
    """Smallest k whose discarded tail satisfies ``||s[k:]|| <= eps_rel * ||s||``.

    ``scale`` is the size of the operands a cancelling sum was formed from;
    a result at round-off level relative to it is treated as zero.
    """
    k = s.size
    if k and s[0] <= CANCEL_TOL * scale:
        return 0
    if eps_rel is not None and k:
        tail = np.sqrt(np.cumsum((s * s)[::-1]))[::-1]  # tail[j] = ||s[j:]||
        bound = eps_rel * tail[0]
        above = np.flatnonzero(tail > bound)
        k = int(above[-1]) + 1 if above.size else 0
    if k_max is not None:
        k = min(k, int(k_max))
    return k


def _svd(A):
    U, s, Vt, info = lapack.dgesdd(A, compute_uv=1, full_matrices=0)
    if info != 0:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return U, s, Vt


_UPPER = {}


def _qr(A):
    """Thin QR of a tall matrix (rows > cols)."""
    qr, tau, _, info = lapack.dgeqrf(A)
    k = A.shape[1]
    mask = _UPPER.get(k)
    if mask is None:
        mask = _UPPER[k] = np.triu(np.ones((k, k), dtype=bool))
    R = np.where(mask, qr[:k], 0.0)
    Q, _, info = lapack.dorgqr(qr, tau)
    return Q, R


def compress_dense(B, eps_rel=None, k_max=None) -> RkMatrix:
    """Optimal rank at relative Frobenius tolerance via a full SVD."""
    B = np.asarray(B, float)
    if B.size == 0:
        return RkMatrix.zeros(*B.shape)
    U, s, Vt = _svd(B)
    k = truncation_rank(s, eps_rel, k_max)
    return RkMatrix(U[:, :k] * s[:k], Vt[:k].T.copy())


def frobenius(X, Y) -> float:
    """``||X @ Y.T||_F`` without forming the product."""
    return float(np.sqrt(max(np.sum((X.T @ X) * (Y.T @ Y)), 0.0)))


def truncate_factors(X, Y, eps_rel=None, k_max=None, scale=0.0):
    """Recompressed factors of ``X @ Y.T``; returns a new pair (X, Y)."""
    m, k = X.shape
    n = Y.shape[0]
    if k == 0:
        return X, Y
    if k >= min(m, n):
        U, s, Vt = _svd(X @ Y.T)
        r = truncation_rank(s, eps_rel, k_max, scale)
        return U[:, :r] * s[:r], Vt[:r].T.copy()
    Qx, Rx = _qr(X)
    Qy, Ry = _qr(Y)
    U, s, Vt = _svd(Rx @ Ry.T)
    r = truncation_rank(s, eps_rel, k_max, scale)
    return Qx @ (U[:, :r] * s[:r]), Qy @ Vt[:r].T


def truncate(R, eps_rel=None, k_max=None) -> RkMatrix:
    """Recompress ``R`` (RkMatrix or dense array) to the requested accuracy.

    QR of both factors, SVD of the small core, then the tail rule of
    :func:`truncation_rank`.  ``eps_rel`` and ``k_max`` may be combined.
    """
    if eps_rel is None and k_max is None:
        raise ValueError("need eps_rel or k_max")
    if not isinstance(R, RkMatrix):
        return compress_dense(R, eps_rel, k_max)
    return RkMatrix(*truncate_factors(R.X, R.Y, eps_rel, k_max))


def add_truncated(R1: RkMatrix, R2: RkMatrix, eps_rel=None, k_max=None) -> RkMatrix:
    """``truncate(R1 + R2)`` via concatenated factors."""
    if R1.shape != R2.shape:
        raise ValueError(f"shape mismatch: {R1.shape} vs {R2.shape}")
    scale = frobenius(R1.X, R1.Y) + frobenius(R2.X, R2.Y)
    return RkMatrix(*truncate_factors(np.concatenate((R1.X, R2.X), axis=1),
                                      np.concatenate((R1.Y, R2.Y), axis=1), eps_rel, k_max,
                                      scale))
