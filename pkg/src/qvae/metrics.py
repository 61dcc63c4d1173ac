"""Evaluation criteria: Mardia's kurtosis, binary cross entropy and MSE."""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError

PROB_CLAMP = (1e-7, 1.0 - 1e-7)


def mardia_kurtosis(Z, ridge=1e-6):
    """Mardia's multivariate excess kurtosis of the rows of ``Z``.

    ``mean_n [(z_n - mu)^T S^-1 (z_n - mu)]^2 - d (d + 2)`` with the sample
    covariance ``S`` (1/(N-1) normalization). Zero in expectation for
    Gaussian data; larger for heavy-tailed data.

    Eigenvalues of ``S`` below ``ridge * lambda_max`` are raised to that
    floor, so a collapsed latent axis keeps the statistic defined while
    well-conditioned data are untouched and the value stays invariant
    under invertible affine maps.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n, d = Z.shape
    if n <= d + 1:
        raise DimensionError(f"need more than d + 1 = {d + 1} samples, got {n}")
    if not np.all(np.isfinite(Z)):
        raise DomainError("samples must be finite")
    centered = Z - Z.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    top = evals[-1]
    if not top > 0.0:
        raise DomainError("samples have zero covariance")
    evals = np.maximum(evals, ridge * top)
    if not np.all(evals > 0.0):
        raise DomainError("sample covariance is singular; use a positive ridge")
    proj = centered @ evecs
    maha = np.sum(proj * proj / evals, axis=1)
    return float(np.mean(maha ** 2) - d * (d + 2))


def bce(x, p):
    """Per-sample summed binary cross entropy, averaged over samples."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if x.shape != p.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {p.shape}")
    p = np.clip(p, *PROB_CLAMP)
    terms = x * np.log(p) + (1.0 - x) * np.log1p(-p)
    if terms.ndim <= 1:
        # a single sample
        return float(-np.sum(terms))
    return float(-np.mean(terms.reshape(terms.shape[0], -1).sum(axis=1)))


def mse(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))
