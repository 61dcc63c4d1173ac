"""Diagonal time-varying linear latent dynamics on top of a q-VAE.

    z_{t+1} = diag(a(z_t)) z_t + B(z_t) u_t

``a`` and ``B`` are read out of one network. Training combines the q-VAE
bound on the next state, decoded from the predicted latent, with a
latent-consistency term ``-gamma * ln rho(z^eta_{t+1} | x_{t+1})``.
Evaluation is deterministic: posterior means and no sampling.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .autodiff import tensor as T
from .autodiff.nn import MLP
from .autodiff.optim import ParameterStore
from .errors import ConfigError, DimensionError, DomainError
from .metrics import mse
from .vae import (
    VAE, EncoderDecoderSpec, LossBreakdown, log_density, regularizer,
    reparameterize, weighted_reconstruction,
)

# encoder hidden widths, dynamics hidden widths
NETWORK_VERSIONS = {
    "V1": ((500, 400, 300, 200, 100), (100, 100, 100, 100, 100)),
    "V2": ((250, 200, 150, 100), (50, 50, 50)),
    "V3": ((100, 100, 100), (100, 100, 100)),
}

DIVERGENCE_BOUND = 1e6


class DynamicsNet:
    """Maps ``z`` (n, d) to ``a`` (n, d) and ``B`` (n, d, m).

    The bias of the ``a`` head starts at 1 so an untrained model is close to
    the identity system.
    """

    def __init__(self, store, latent_dim, action_dim, hidden, rng, prefix="dynamics"):
        self.latent_dim = int(latent_dim)
        self.action_dim = int(action_dim)
        d, m = self.latent_dim, self.action_dim
        self.mlp = MLP(store, prefix, d, hidden, (d, d * m), rng)
        self.mlp.heads[0].bias.value = np.ones(d)

    def __call__(self, z):
        a, b = self.mlp(z)
        n = z.shape[0]
        return a, T.reshape(b, (n, self.latent_dim, self.action_dim))


def transition(z, u, net):
    """One latent step ``diag(a(z)) z + B(z) u`` for a batch of rows."""
    z = T.as_tensor(z)
    u = T.as_tensor(u)
    if z.ndim != 2 or u.ndim != 2 or z.shape[0] != u.shape[0]:
        raise DimensionError(f"latent {z.shape} and action {u.shape} batches disagree")
    a, B = net(z)
    if a.shape != z.shape or B.shape != (z.shape[0], z.shape[1], u.shape[1]):
        raise DimensionError(f"network outputs {a.shape}, {B.shape} do not match z {z.shape}, u {u.shape}")
    n, m = u.shape
    drive = T.tsum(B * T.reshape(u, (n, 1, m)), axis=-1)
    return a * z + drive


@dataclass
class Rollout:
    latents: np.ndarray      # (n, T, d)
    diverged: np.ndarray     # (n,) bool


def rollout(z0, actions, net, divergence_bound=DIVERGENCE_BOUND):
    """Iterate :func:`transition` from ``z0`` (n, d) over ``actions`` (n, T, m).

    Rows whose latent becomes non-finite or exceeds ``divergence_bound`` in
    magnitude are flagged and frozen at NaN; the rollout does not raise.
    """
    z0 = np.asarray(z0, dtype=float)
    actions = np.asarray(actions, dtype=float)
    squeeze = z0.ndim == 1
    if squeeze:
        z0, actions = z0[None], actions[None]
    n, steps, _ = actions.shape
    if steps < 1:
        raise DimensionError("rollout needs at least one action")
    out = np.full((n, steps, z0.shape[1]), np.nan)
    diverged = np.zeros(n, dtype=bool)
    z = z0.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            live = ~diverged
            if not live.any():
                break
            try:
                nz = transition(z[live], actions[live, t], net).value
            except DomainError:
                nz = np.full((live.sum(), z.shape[1]), np.nan)
            bad = ~np.all(np.isfinite(nz) & (np.abs(nz) <= divergence_bound), axis=1)
            idx = np.flatnonzero(live)
            nz[bad] = np.nan
            out[idx, t] = nz
            z[idx] = np.where(bad[:, None], 0.0, nz)
            diverged[idx[bad]] = True
    if squeeze:
        return Rollout(out[0], diverged[:1])
    return Rollout(out, diverged)


class LatentDynamicsModel:
    """Encoder, decoder and transition network sharing one parameter store."""

    def __init__(self, state_dim, action_dim, hyper, version="V3", seed=0,
                 encoder_hidden=None, dynamics_hidden=None):
        if version is not None:
            if version not in NETWORK_VERSIONS:
                raise ConfigError(f"unknown network version {version!r}")
            enc_default, dyn_default = NETWORK_VERSIONS[version]
            encoder_hidden = enc_default if encoder_hidden is None else encoder_hidden
            dynamics_hidden = dyn_default if dynamics_hidden is None else dynamics_hidden
        if hyper.decoder_family != "gaussian":
            raise ConfigError("latent dynamics use the unit-variance Gaussian decoder")
        self.hyper = hyper
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.store = ParameterStore()
        spec = EncoderDecoderSpec.mirrored(state_dim, encoder_hidden)
        self.vae = VAE(spec, hyper, seed=seed, store=self.store)
        rng = np.random.default_rng([int(seed), 1])
        self.net = DynamicsNet(self.store, hyper.latent_dim, action_dim, dynamics_hidden, rng)

    @property
    def latent_dim(self):
        return self.vae.latent_dim

    def encode(self, x):
        return self.vae.encode(x)

    def decode(self, z):
        return self.vae.decode(z)

    def encode_mean(self, x):
        return self.vae.encode(np.atleast_2d(x)).mean.value


def dynamics_loss(model, x, u, x_next, hyper, noise, coefficient=None):
    """Batch-mean dynamics objective over transitions ``(x_t, u_t, x_{t+1})``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    if not (len(x) == len(u) == len(x_next)):
        raise DimensionError("transition arrays have different lengths")
    posterior = model.encode(x)
    z = reparameterize(posterior, noise)
    z_pred = transition(z, u, model.net)
    decoded = model.decode(z_pred)
    recon, coef = weighted_reconstruction(x_next, decoded, posterior, z, hyper,
                                          model.vae.prior(), coefficient)
    reg = regularizer(posterior, hyper)
    recon_m = T.mean(recon)
    reg_m = T.mean(reg)
    total = recon_m + reg_m
    if hyper.gamma > 0.0:
        next_posterior = model.encode(x_next)
        latent_m = T.mean(log_density(z_pred, next_posterior)) * -hyper.gamma
        total = total + latent_m
        latent_value = latent_m.item()
    else:
        latent_value = 0.0
    return LossBreakdown(
        reconstruction_term=recon_m.item(),
        regularizer_term=reg_m.item(),
        beta_q_inverse=float(np.mean(coef.value)),
        latent_consistency_term=latent_value,
        total=total.item(),
        node=total,
    )


@dataclass
class Prediction:
    states: np.ndarray       # (T, state_dim)
    latents: np.ndarray      # (T, d)
    diverged: bool


def predict_states(model, x0, actions):
    """Predict ``x_1..x_T`` from ``x_0`` and the action sequence alone."""
    actions = np.asarray(actions, dtype=float)
    z0 = model.encode_mean(x0)[0]
    roll = rollout(z0, actions, model.net)
    with np.errstate(over="ignore", invalid="ignore"):
        if roll.diverged[0]:
            states = np.full((len(actions), model.state_dim), np.nan)
            ok = np.all(np.isfinite(roll.latents), axis=1)
            if ok.any():
                states[ok] = model.decode(roll.latents[ok]).value
        else:
            states = model.decode(roll.latents).value
    return Prediction(states, roll.latents, bool(roll.diverged[0]))


@dataclass
class PredictionScores:
    one_step_state: float
    one_step_latent: float
    t_step_state: float
    t_step_latent: float
    diverged_state: int
    diverged_latent: int
    n_trajectories: int

    def as_dict(self):
        return dict(self.__dict__)


def _trajectory_mse(pred, true):
    if not np.all(np.isfinite(pred)):
        return np.inf
    with np.errstate(over="ignore"):
        val = mse(pred, true)
    return val if np.isfinite(val) else np.inf


def evaluate_prediction(batch, model):
    """Four prediction errors on held-out trajectories.

    1-step errors re-encode every ``x_t``; T-step errors roll out from
    ``x_0`` only. Errors are averaged over steps within a trajectory and then
    over trajectories. A diverged rollout counts as an infinite error and is
    counted in ``diverged_*``.
    """
    one_state, one_latent, t_state, t_latent = [], [], [], []
    div_state = div_latent = 0
    groups = defaultdict(list)
    for i, length in enumerate(batch.lengths):
        groups[length].append(i)
    for length, idx in groups.items():
        states = np.stack([batch.states[i] for i in idx])      # (k, T+1, n)
        actions = np.stack([batch.actions[i] for i in idx])    # (k, T, m)
        k = len(idx)
        flat = states.reshape(-1, states.shape[-1])
        means = model.encode_mean(flat).reshape(k, length + 1, -1)
        z_now = means[:, :-1].reshape(-1, means.shape[-1])
        u_now = actions.reshape(-1, actions.shape[-1])
        with np.errstate(over="ignore", invalid="ignore"):
            z_next = transition(z_now, u_now, model.net).value
            x_next = model.decode(z_next).value
        z_next = z_next.reshape(k, length, -1)
        x_next = x_next.reshape(k, length, -1)
        roll = rollout(means[:, 0], actions, model.net)
        for j in range(k):
            one_state.append(_trajectory_mse(x_next[j], states[j, 1:]))
            one_latent.append(_trajectory_mse(z_next[j], means[j, 1:]))
            if roll.diverged[j]:
                div_latent += 1
                div_state += 1
                t_latent.append(np.inf)
                t_state.append(np.inf)
                continue
            t_latent.append(_trajectory_mse(roll.latents[j], means[j, 1:]))
            with np.errstate(over="ignore", invalid="ignore"):
                x_roll = model.decode(roll.latents[j]).value
            val = _trajectory_mse(x_roll, states[j, 1:])
            div_state += int(not np.isfinite(val))
            t_state.append(val)
    return PredictionScores(
        one_step_state=float(np.mean(one_state)),
        one_step_latent=float(np.mean(one_latent)),
        t_step_state=float(np.mean(t_state)),
        t_step_latent=float(np.mean(t_latent)),
        diverged_state=div_state,
        diverged_latent=div_latent,
        n_trajectories=len(batch),
    )
