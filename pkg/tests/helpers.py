"""Exact stand-in models shared by the dynamics and harness tests."""
import numpy as np

from qvae.autodiff import tensor as T
from qvae.autodiff.optim import ParameterStore


class FixedNet:
    """Constant ``a`` and ``B`` regardless of ``z``."""

    def __init__(self, a, B):
        self.a = np.asarray(a, dtype=float)
        self.B = np.asarray(B, dtype=float)

    def __call__(self, z):
        n = z.shape[0]
        return (T.Tensor(np.broadcast_to(self.a, (n,) + self.a.shape).copy()),
                T.Tensor(np.broadcast_to(self.B, (n,) + self.B.shape).copy()))


class PerfectLinear:
    """Exact encoder, decoder and transition for x = C z with a diagonal system."""

    def __init__(self, decay, control, observation):
        self.decay = np.asarray(decay, dtype=float)
        self.control = np.asarray(control, dtype=float)
        self.C = np.asarray(observation, dtype=float)
        self.pinv = np.linalg.pinv(self.C)
        self.state_dim, self.latent_dim = self.C.shape
        self.net = FixedNet(self.decay, self.control)
        self.store = ParameterStore()

    def encode_mean(self, x):
        return np.atleast_2d(x) @ self.pinv.T

    def decode(self, z):
        return T.Tensor(np.asarray(T.as_tensor(z).value) @ self.C.T)
