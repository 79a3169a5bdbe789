"""Gaussian kernel evaluation and Gram matrices.

One kernel convention is used everywhere in the package:

    k(x, y) = exp(-||x - y||^2 / (2 sigma^2))

with the bandwidth rule sigma = sqrt(2 d) unless overridden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

# Above this dimension the a^2 + b^2 - 2ab expansion loses too many digits
# to cancellation; fall back to direct differences.
_DIRECT_DIFF_DIM = 256


@dataclass(frozen=True)
class GaussianKernel:
    """Gaussian (RBF) kernel with bandwidth ``sigma``."""

    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError(f"kernel bandwidth must be a positive real, got {self.sigma!r}")


def default_bandwidth(d: int) -> float:
    """Bandwidth sqrt(2 d) for d-dimensional inputs."""
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got {d}")
    return math.sqrt(2.0 * d)


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows of A (m x d) and B (l x d)."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    d = A.shape[1]
    if d > _DIRECT_DIFF_DIM:
        # Direct differences, row-chunked to bound memory.
        out = np.empty((A.shape[0], B.shape[0]))
        chunk = max(1, int(2e7) // (B.shape[0] * d + 1))
        for start in range(0, A.shape[0], chunk):
            diff = A[start : start + chunk, None, :] - B[None, :, :]
            out[start : start + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
        return out
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def gram(kernel: GaussianKernel, A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """Matrix of kernel evaluations between rows of A and rows of B (A itself if None)."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if B is None:
        sq = squared_distances(A, A)
        K = np.exp(sq / (-2.0 * kernel.sigma**2))
        # Exact symmetry and unit diagonal despite rounding in the expansion.
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, 1.0)
        return K
    sq = squared_distances(A, B)
    return np.exp(sq / (-2.0 * kernel.sigma**2))


def kernel_eval(kernel: GaussianKernel, x: np.ndarray, y: np.ndarray) -> float:
    """k(x, y) for two d-vectors."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"dimension mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    return float(np.exp(-(diff @ diff) / (2.0 * kernel.sigma**2)))
