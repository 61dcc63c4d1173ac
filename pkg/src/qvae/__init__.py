"""q-deformed variational autoencoders and latent dynamics on numpy."""
from .errors import (
    ConfigError, DefinitenessError, DimensionError, DomainError, FormatError,
    GradientStateError, QvaeError,
)
from .qmath import (
    DiagonalGaussian, kl_gauss, q_exp, q_log, q_product, tsallis_kl_gauss,
    tsallis_kl_monte_carlo,
)
from .vae import VAE, EncoderDecoderSpec, QvaeHyperParams, elbo_loss
from .dynamics import LatentDynamicsModel, dynamics_loss, rollout, transition
from .metrics import bce, mardia_kurtosis, mse

__version__ = "0.1.0"
