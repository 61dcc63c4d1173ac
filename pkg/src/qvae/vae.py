"""Encoder/decoder networks and the VAE, beta-VAE and q-VAE objectives.

The q-VAE lower bound for one input is

    ln_q p(x|z) / beta_q(x, z) - beta * KL_q(rho(z|x) || p(z))

with the adaptive coefficient ``1 / beta_q = (p(z) / rho(z|x))^(1-q)``,
evaluated on the same single sample ``z`` used for reconstruction and
treated as a constant (no gradient flows through it).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qmath
from .autodiff import tensor as T
from .autodiff.nn import MLP
from .autodiff.optim import AdamConfig, ParameterStore
from .errors import ConfigError, DefinitenessError, DimensionError, DomainError

OBJECTIVE_MODES = ("vae", "beta_vae", "q_vae", "q_vae_simplified")
DECODER_FAMILIES = ("bernoulli", "gaussian")
LIKELIHOOD_REDUCTIONS = ("sample", "element")
PROB_CLAMP = (1e-7, 1.0 - 1e-7)


@dataclass(frozen=True)
class QvaeHyperParams:
    """Objective knobs.

    ``likelihood_reduction`` controls where the q-logarithm is applied to
    the decoder likelihood. ``"sample"`` deforms the joint log-likelihood of
    each input, ``ln_q prod_i p(x_i|z)``. ``"element"`` treats the output
    coordinates as q-independent, ``sum_i ln_q p(x_i|z)``, which is the
    q-logarithm of their q-product. Both coincide at q = 1.
    """

    q: float = 1.0
    beta: float = 1.0
    gamma: float = 0.0
    latent_dim: int = 10
    decoder_family: str = "bernoulli"
    objective_mode: str = "q_vae"
    coefficient_clamp: tuple = (1e-2, 1e2)
    likelihood_reduction: str = "element"
    optimizer: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        qmath.check_q(self.q)
        if not self.beta >= 0.0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")
        if not self.gamma >= 0.0:
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")
        if int(self.latent_dim) < 1:
            raise ConfigError("latent_dim must be at least 1")
        if self.decoder_family not in DECODER_FAMILIES:
            raise ConfigError(f"unknown decoder family {self.decoder_family!r}")
        if self.objective_mode not in OBJECTIVE_MODES:
            raise ConfigError(f"unknown objective mode {self.objective_mode!r}")
        if self.likelihood_reduction not in LIKELIHOOD_REDUCTIONS:
            raise ConfigError(f"unknown likelihood reduction {self.likelihood_reduction!r}")
        lo, hi = self.coefficient_clamp
        if not 0.0 < lo <= 1.0 <= hi:
            raise ConfigError(f"coefficient clamp must satisfy 0 < lo <= 1 <= hi, got {(lo, hi)}")


@dataclass(frozen=True)
class EncoderDecoderSpec:
    input_dim: int
    encoder_hidden: tuple
    decoder_hidden: tuple

    def __post_init__(self):
        if self.input_dim < 1 or any(w < 1 for w in self.encoder_hidden + self.decoder_hidden):
            raise ConfigError("layer widths must be positive")

    @classmethod
    def mnist(cls):
        return cls(784, (500, 275, 50), (255, 500))

    @classmethod
    def mirrored(cls, input_dim, encoder_hidden):
        """Decoder hidden widths are the encoder's in reverse order."""
        enc = tuple(int(w) for w in encoder_hidden)
        return cls(int(input_dim), enc, enc[::-1])


@dataclass
class LossBreakdown:
    """Batch-mean loss terms, each signed for minimization."""

    reconstruction_term: float
    regularizer_term: float
    beta_q_inverse: float
    latent_consistency_term: float
    total: float
    node: T.Tensor | None = field(default=None, repr=False, compare=False)

    def backward(self):
        self.node.backward()

    def as_dict(self):
        return {
            "reconstruction": self.reconstruction_term,
            "regularizer": self.regularizer_term,
            "beta_q_inverse": self.beta_q_inverse,
            "latent_consistency": self.latent_consistency_term,
            "total": self.total,
        }


@dataclass
class GaussianNode:
    """Batch of diagonal Gaussians whose parameters live in the graph."""

    mean: T.Tensor
    log_variance: T.Tensor

    @property
    def dim(self):
        return self.mean.shape[-1]

    def numeric(self):
        return qmath.DiagonalGaussian(self.mean.value, self.log_variance.value)


def _as_node(g):
    if isinstance(g, GaussianNode):
        return g
    return GaussianNode(T.Tensor(g.mean), T.Tensor(g.log_variance))


# ---- differentiable densities and divergences -------------------------

def log_density(z, g):
    """Per-row diagonal-Gaussian log density as a graph node."""
    g = _as_node(g)
    z = T.as_tensor(z)
    if z.shape[-1] != g.dim:
        raise DimensionError(f"latent dimension {z.shape[-1]} != {g.dim}")
    maha = T.square(z - g.mean) * T.exp(-g.log_variance)
    return T.tsum(qmath.LOG_2PI + g.log_variance + maha, axis=-1) * -0.5


def kl_to_standard(g):
    """KL(g || N(0, I)) per row."""
    g = _as_node(g)
    terms = T.exp(g.log_variance) + T.square(g.mean) - 1.0 - g.log_variance
    return T.tsum(terms, axis=-1) * 0.5


def tsallis_kl_to_standard(g, q):
    """KL_q(g || N(0, I)) per row, the closed form of :mod:`qvae.qmath` in graph form."""
    q = qmath.check_q(q)
    g = _as_node(g)
    if qmath.is_unit_q(q):
        return kl_to_standard(g)
    # mixture variance relative to the posterior variance
    rel = T.exp(-g.log_variance) * q + (1.0 - q)
    if np.any(rel.value <= 0.0):
        raise DefinitenessError(f"mixture covariance not positive definite for q={q}")
    log_rel = T.log(rel)
    maha = T.square(g.mean) * T.exp(-g.log_variance - log_rel)
    log_int = T.tsum(g.log_variance * -q - log_rel - maha * (q * (1.0 - q)), axis=-1) * 0.5
    return T.expm1(log_int) * (1.0 / (q - 1.0))


# ---- likelihood terms --------------------------------------------------

def log_likelihood(x, decoded, family, reduction="sample"):
    """Decoder log-likelihood of targets ``x``.

    ``reduction="sample"`` sums over output coordinates giving one value per
    row; ``"element"`` keeps per-coordinate terms.
    """
    x = np.asarray(x.value if isinstance(x, T.Tensor) else x, dtype=float)
    decoded = T.as_tensor(decoded)
    if x.shape != decoded.shape:
        raise DimensionError(f"target shape {x.shape} != decoder shape {decoded.shape}")
    if family == "bernoulli":
        lo, hi = PROB_CLAMP
        p = decoded.value
        if np.any(p < lo) or np.any(p > hi):
            raise DomainError("probabilities outside the clamp range")
        terms = T.log(decoded) * x + T.log(1.0 - decoded) * (1.0 - x)
    elif family == "gaussian":
        terms = T.square(decoded - x) * -0.5 - 0.5 * qmath.LOG_2PI
    else:
        raise ConfigError(f"unknown decoder family {family!r}")
    if reduction == "sample":
        return T.tsum(terms, axis=-1)
    if reduction == "element":
        return terms
    raise ConfigError(f"unknown reduction {reduction!r}")


def q_log_likelihood(S, q):
    """``ln_q`` of a likelihood given its natural log ``S``.

    Computed as ``expm1((1 - q) S) / (1 - q)``, bounded below by
    ``-1 / (1 - q)`` for q < 1; returns ``S`` at q = 1.
    """
    q = qmath.check_q(q)
    if qmath.is_unit_q(q):
        return S if isinstance(S, T.Tensor) else np.asarray(S, dtype=float)
    if isinstance(S, T.Tensor):
        return T.expm1(S * (1.0 - q)) * (1.0 / (1.0 - q))
    return np.expm1((1.0 - q) * np.asarray(S, dtype=float)) / (1.0 - q)


def beta_q_inverse(prior, posterior, z, q, clamp=(1e-2, 1e2)):
    """Adaptive reconstruction weight ``(p(z) / rho(z|x))^(1-q)``.

    Returned as a gradient-free node, one value per row, clamped to
    ``clamp``.
    """
    q = qmath.check_q(q)
    z = T.as_tensor(z)
    log_ratio = log_density(z, prior) - log_density(z, posterior)
    coef = T.clamp(T.exp(log_ratio * (1.0 - q)), clamp[0], clamp[1])
    return T.stop_gradient(coef)


# ---- model -------------------------------------------------------------

class VAE:
    """Encoder ``x -> (mean, log_variance)`` and decoder ``z -> x``."""

    def __init__(self, spec, hyper, seed=0, store=None, prefix=""):
        self.spec = spec
        self.hyper = hyper
        self.store = ParameterStore() if store is None else store
        rng = np.random.default_rng(seed)
        d = int(hyper.latent_dim)
        self.latent_dim = d
        self.encoder = MLP(self.store, f"{prefix}encoder", spec.input_dim,
                           spec.encoder_hidden, (d, d), rng)
        self.decoder = MLP(self.store, f"{prefix}decoder", d,
                           spec.decoder_hidden, spec.input_dim, rng)

    def encode(self, x):
        x = T.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise DimensionError(f"expected input of shape (batch, {self.spec.input_dim}), got {x.shape}")
        mean, log_var = self.encoder(x)
        if not (np.all(np.isfinite(mean.value)) and np.all(np.isfinite(log_var.value))):
            raise DomainError("non-finite encoder output")
        return GaussianNode(mean, T.clamp(log_var, *qmath.LOG_VARIANCE_BOUNDS))

    def decode(self, z):
        z = T.as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise DimensionError(f"expected latent of shape (batch, {self.latent_dim}), got {z.shape}")
        out = self.decoder(z)
        if self.hyper.decoder_family == "bernoulli":
            return T.clamp(T.sigmoid(out), *PROB_CLAMP)
        return out

    def prior(self):
        return qmath.DiagonalGaussian.standard(self.latent_dim)


def reparameterize(g, noise):
    """``z = mean + exp(log_variance / 2) * noise``."""
    g = _as_node(g)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != g.mean.shape:
        raise DimensionError(f"noise shape {noise.shape} != {g.mean.shape}")
    return g.mean + T.exp(g.log_variance * 0.5) * noise


def regularizer(posterior, hyper):
    """Per-row divergence term with its weight, for the configured mode."""
    mode = hyper.objective_mode
    if mode == "vae":
        return kl_to_standard(posterior)
    if mode in ("beta_vae", "q_vae_simplified"):
        return kl_to_standard(posterior) * hyper.beta
    return tsallis_kl_to_standard(posterior, hyper.q) * hyper.beta


def weighted_reconstruction(x, decoded, posterior, z, hyper, prior, coefficient=None):
    """Per-row ``-(1/beta_q) * ln_q p(x|z)`` (plain ``-ln p`` for vae/beta_vae).

    Returns ``(term, coefficient)``. ``coefficient`` may be passed in as a
    precomputed array to replace the frozen graph node.
    """
    mode = hyper.objective_mode
    reduction = hyper.likelihood_reduction
    S = log_likelihood(x, decoded, hyper.decoder_family, reduction)
    if mode in ("vae", "beta_vae"):
        ll = S
        coef = T.Tensor(np.ones(x.shape[0]))
    else:
        ll = q_log_likelihood(S, hyper.q)
        if coefficient is None:
            coef = beta_q_inverse(prior, posterior, z, hyper.q, hyper.coefficient_clamp)
        else:
            coef = T.Tensor(np.asarray(coefficient, dtype=float))
    if reduction == "element":
        ll = T.tsum(ll, axis=-1)
    return -(ll * coef), coef


def elbo_loss(model, x, hyper, noise, coefficient=None):
    """Batch-mean minimization loss of the configured objective."""
    x = np.asarray(x, dtype=float)
    posterior = model.encode(x)
    z = reparameterize(posterior, noise)
    decoded = model.decode(z)
    recon, coef = weighted_reconstruction(x, decoded, posterior, z, hyper,
                                          model.prior(), coefficient)
    reg = regularizer(posterior, hyper)
    recon_m = T.mean(recon)
    reg_m = T.mean(reg)
    total = recon_m + reg_m
    return LossBreakdown(
        reconstruction_term=recon_m.item(),
        regularizer_term=reg_m.item(),
        beta_q_inverse=float(np.mean(coef.value)),
        latent_consistency_term=0.0,
        total=total.item(),
        node=total,
    )
