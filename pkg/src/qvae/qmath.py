"""Tsallis statistics on numpy arrays.

Deformed logarithm, exponential and product, plus divergences between
diagonal Gaussians. The Tsallis divergence is

    KL_q(p1 || p2) = -E_{p1}[ln_q(p2 / p1)] = (int p1^q p2^(1-q) dz - 1) / (q - 1)

For Gaussians the integral has a closed form in terms of the mixture
covariance ``q * S2 + (1 - q) * S1``::

    ln int p1^q p2^(1-q) = 1/2 [ln(|S2|^q |S1|^(1-q) / |S|) - q (1-q) dm^T S^-1 dm]

Note the minus sign on the Mahalanobis term. Printed versions of this
formula with a plus sign give negative divergences for q < 1 and distinct
means; :func:`tsallis_kl_monte_carlo` estimates the defining expectation
directly and is used to check the closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DefinitenessError, DimensionError, DomainError

#: |q - 1| below this selects the natural-log branch.
UNIT_Q_TOL = 1e-12
#: Log-variances are clamped into this range at construction.
LOG_VARIANCE_BOUNDS = (-20.0, 20.0)
LOG_2PI = float(np.log(2.0 * np.pi))


def check_q(q):
    """Validate a deformation parameter and return it as a float."""
    q = float(q)
    if not np.isfinite(q) or not 0.0 < q < 2.0:
        raise DomainError(f"q must lie in (0, 2), got {q}")
    return q


def is_unit_q(q):
    return abs(q - 1.0) < UNIT_Q_TOL


def _scalar_or_array(out, *inputs):
    if all(np.ndim(v) == 0 for v in inputs):
        return float(out)
    return out


def q_log(x, q):
    """Deformed logarithm ``(x^(1-q) - 1) / (1 - q)``; ``ln x`` at q = 1."""
    q = check_q(q)
    xa = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xa)):
        raise DomainError("q_log argument must be finite")
    if np.any(xa <= 0.0):
        raise DomainError("q_log argument must be positive")
    if is_unit_q(q):
        out = np.log(xa)
    else:
        # expm1 keeps precision when (1 - q) ln x is small
        out = np.expm1((1.0 - q) * np.log(xa)) / (1.0 - q)
    return _scalar_or_array(out, x)


def q_exp(x, q):
    """Deformed exponential, the inverse of :func:`q_log`.

    ``[1 + (1 - q) x]_+^(1 / (1 - q))``; points where the bracket is not
    positive map to 0.
    """
    q = check_q(q)
    xa = np.asarray(x, dtype=float)
    if is_unit_q(q):
        return _scalar_or_array(np.exp(xa), x)
    # log1p keeps precision when (1 - q) x is small
    shift = (1.0 - q) * xa
    pos = shift > -1.0
    out = np.zeros_like(shift)
    out[pos] = np.exp(np.log1p(shift[pos]) / (1.0 - q))
    return _scalar_or_array(out, x)


def q_product(x, y, q):
    """Deformed product, under which :func:`q_log` is additive."""
    q = check_q(q)
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if np.any(xa < 0.0) or np.any(ya < 0.0):
        raise DomainError("q_product arguments must be nonnegative")
    if is_unit_q(q):
        return _scalar_or_array(xa * ya, x, y)
    with np.errstate(divide="ignore"):
        base = xa ** (1.0 - q) + ya ** (1.0 - q) - 1.0
    base, _ = np.broadcast_arrays(base, xa)
    pos = (base > 0.0) & np.isfinite(base)
    out = np.zeros(base.shape)
    out[pos] = base[pos] ** (1.0 / (1.0 - q))
    return _scalar_or_array(out, x, y)


@dataclass(frozen=True)
class DiagonalGaussian:
    """Gaussian with diagonal covariance, stored as mean and log-variance.

    Both arrays share a shape ``(..., d)``; leading axes index a batch.
    """

    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        log_var = np.asarray(self.log_variance, dtype=float)
        if mean.ndim == 0:
            mean = mean.reshape(1)
        if log_var.ndim == 0:
            log_var = log_var.reshape(1)
        if mean.shape != log_var.shape:
            raise DimensionError(
                f"mean shape {mean.shape} != log_variance shape {log_var.shape}")
        if mean.shape[-1] < 1:
            raise DimensionError("dimension must be at least 1")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_var))):
            raise DomainError("Gaussian parameters must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_variance", np.clip(log_var, *LOG_VARIANCE_BOUNDS))

    @classmethod
    def standard(cls, d):
        return cls(np.zeros(d), np.zeros(d))

    @property
    def dim(self):
        return self.mean.shape[-1]

    @property
    def variance(self):
        return np.exp(self.log_variance)

    def sample(self, rng, n):
        """Draw ``n`` samples of shape ``(n, d)``; unbatched Gaussians only."""
        noise = rng.standard_normal((n,) + self.mean.shape)
        return self.mean + np.exp(0.5 * self.log_variance) * noise


def _check_same_dim(a, b):
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")


def gauss_log_density(z, g):
    """Log density of ``z`` (shape ``(..., d)``) under a diagonal Gaussian."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = z.reshape(1)
    if z.shape[-1] != g.dim:
        raise DimensionError(f"point has dimension {z.shape[-1]}, Gaussian has {g.dim}")
    maha = (z - g.mean) ** 2 * np.exp(-g.log_variance)
    out = -0.5 * np.sum(LOG_2PI + g.log_variance + maha, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def kl_gauss(p1, p2):
    """KL(p1 || p2) for diagonal Gaussians, summed over the last axis."""
    _check_same_dim(p1, p2)
    ratio = np.exp(p1.log_variance - p2.log_variance)
    maha = (p2.mean - p1.mean) ** 2 * np.exp(-p2.log_variance)
    terms = ratio + maha - 1.0 + (p2.log_variance - p1.log_variance)
    out = np.maximum(0.5 * np.sum(terms, axis=-1), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def log_power_integral(p1, p2, q):
    """``ln int p1^q p2^(1-q) dz`` for diagonal Gaussians.

    Raises :class:`DefinitenessError` if the mixture variance
    ``q * var2 + (1 - q) * var1`` is not strictly positive in some dimension,
    which can only happen for q > 1.
    """
    q = check_q(q)
    _check_same_dim(p1, p2)
    # mixture variance relative to var1, so equal inputs give exactly ln(1)
    rel = q * np.exp(p2.log_variance - p1.log_variance) + (1.0 - q)
    if np.any(rel <= 0.0):
        raise DefinitenessError(
            f"mixture covariance not positive definite for q={q}")
    log_mix = p1.log_variance + np.log(rel)
    dm2 = (p2.mean - p1.mean) ** 2
    terms = (q * (p2.log_variance - p1.log_variance) - np.log(rel)
             - q * (1.0 - q) * dm2 * np.exp(-log_mix))
    return 0.5 * np.sum(terms, axis=-1)


def tsallis_kl_gauss(p1, p2, q):
    """Closed-form Tsallis divergence KL_q(p1 || p2) for diagonal Gaussians."""
    q = check_q(q)
    _check_same_dim(p1, p2)
    if is_unit_q(q):
        return kl_gauss(p1, p2)
    out = np.expm1(log_power_integral(p1, p2, q)) / (q - 1.0)
    # the divergence is nonnegative; this only absorbs rounding at p1 == p2
    out = np.maximum(out, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def tsallis_kl_monte_carlo(p1, p2, q, n_samples, seed):
    """Monte-Carlo estimate of KL_q(p1 || p2) from its defining expectation.

    Averages ``-ln_q(p2(z) / p1(z))`` over ``z ~ p1``. Returns
    ``(estimate, standard_error)``. Independent of the closed form: only
    densities are evaluated.
    """
    q = check_q(q)
    _check_same_dim(p1, p2)
    if p1.mean.ndim != 1:
        raise DimensionError("Monte-Carlo oracle takes unbatched Gaussians")
    n_samples = int(n_samples)
    if n_samples < 1000:
        raise DomainError("n_samples must be at least 1000")
    rng = np.random.default_rng(seed)
    chunk = 200_000
    # chunked mean / sum of squared deviations, merged pairwise
    count, mean, m2 = 0, 0.0, 0.0
    while count < n_samples:
        m = min(chunk, n_samples - count)
        z = p1.sample(rng, m)
        log_ratio = gauss_log_density(z, p2) - gauss_log_density(z, p1)
        if is_unit_q(q):
            vals = -log_ratio
        else:
            vals = -np.expm1((1.0 - q) * log_ratio) / (1.0 - q)
        c_mean = vals.mean()
        c_m2 = np.sum((vals - c_mean) ** 2)
        delta = c_mean - mean
        new_count = count + m
        mean += delta * m / new_count
        m2 += c_m2 + delta * delta * count * m / new_count
        count = new_count
    var = m2 / (n_samples - 1)
    return float(mean), float(np.sqrt(var / n_samples))
