"""Datasets: MNIST IDX files, trajectory files and synthetic controlled systems.

Trajectory file layout (little-endian)::

    b"QTRJ"                         magic
    u32 version                     currently 1
    u32 state_dim, u32 action_dim, u32 n_trajectories
    n_trajectories times u32        number of actions T_i per trajectory
    per trajectory:
        (T_i + 1) * state_dim f64   states, row-major
        T_i * action_dim f64        actions, row-major
"""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
TRAJ_MAGIC = b"QTRJ"
TRAJ_VERSION = 1


@dataclass
class ImageDataset:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or len(self.images) == 0:
            raise DimensionError("images must be a nonempty (N, D) array")
        if len(self.images) != len(self.labels):
            raise DimensionError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise DomainError("pixels must lie in [0, 1]")

    def __len__(self):
        return len(self.images)

    def subset(self, idx):
        return ImageDataset(self.images[idx], self.labels[idx])


def _read_maybe_gzip(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, expected_magic, path):
    if len(raw) < 8:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header != size:
        raise FormatError(f"{path}: payload has {len(raw) - header} bytes, header declares {size}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path):
    """Parse an IDX image/label pair (optionally gzip-compressed).

    Pixels are scaled by 1/255 and flattened to ``(N, rows * cols)``.
    """
    images = _parse_idx(_read_maybe_gzip(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_maybe_gzip(labels_path), IDX_LABELS_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DimensionError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return ImageDataset(flat, labels.astype(np.int64))


def write_mnist_idx(images, labels, images_path, labels_path, shape=(28, 28), compress=None):
    """Write uint8 images (N, rows*cols) in [0, 255] and labels as IDX files.

    Paths ending in ``.gz`` are gzip-compressed unless ``compress`` says otherwise.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8:
        images = np.clip(np.rint(np.asarray(images, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    n = images.shape[0]
    img_raw = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, *shape) + images.reshape(n, -1).tobytes()
    lab_raw = struct.pack(">II", IDX_LABELS_MAGIC, n) + labels.astype(np.uint8).tobytes()
    for path, raw in ((images_path, img_raw), (labels_path, lab_raw)):
        use_gz = str(path).endswith(".gz") if compress is None else compress
        with open(path, "wb") as fh:
            fh.write(gzip.compress(raw, mtime=0) if use_gz else raw)


# ---- trajectories -------------------------------------------------------

@dataclass
class TrajectoryBatch:
    """Variable-length controlled trajectories.

    ``states[i]`` has shape ``(T_i + 1, state_dim)`` and ``actions[i]`` has
    shape ``(T_i, action_dim)``.
    """

    states: list
    actions: list

    def __post_init__(self):
        self.states = [np.asarray(s, dtype=np.float64) for s in self.states]
        self.actions = [np.asarray(a, dtype=np.float64) for a in self.actions]
        if len(self.states) != len(self.actions):
            raise DimensionError("states and actions must list the same trajectories")
        if not self.states:
            return
        n, m = self.states[0].shape[1], self.actions[0].shape[1]
        for s, a in zip(self.states, self.actions):
            if s.ndim != 2 or a.ndim != 2 or s.shape[1] != n or a.shape[1] != m:
                raise DimensionError("inconsistent dimensions across the batch")
            if len(s) != len(a) + 1:
                raise DimensionError(f"{len(s)} states for {len(a)} actions")
            if len(a) < 1:
                raise DimensionError("trajectories need at least one action")
            if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
                raise DomainError("non-finite trajectory values")

    def __len__(self):
        return len(self.states)

    @property
    def state_dim(self):
        return self.states[0].shape[1]

    @property
    def action_dim(self):
        return self.actions[0].shape[1]

    @property
    def lengths(self):
        return [len(a) for a in self.actions]

    def subset(self, idx):
        return TrajectoryBatch([self.states[i] for i in idx], [self.actions[i] for i in idx])

    def tuples(self):
        """Stack all ``(x_t, u_t, x_{t+1})`` transitions."""
        x = np.concatenate([s[:-1] for s in self.states])
        u = np.concatenate(self.actions)
        xn = np.concatenate([s[1:] for s in self.states])
        return x, u, xn


def write_trajectory_file(path, batch):
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(struct.pack("<IIII", TRAJ_VERSION, batch.state_dim, batch.action_dim, len(batch)))
        fh.write(struct.pack(f"<{len(batch)}I", *batch.lengths))
        for s, a in zip(batch.states, batch.actions):
            fh.write(np.ascontiguousarray(s, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_trajectory_file(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:4] != TRAJ_MAGIC:
        raise FormatError(f"{path}: not a trajectory file")
    version, n, m, count = struct.unpack("<IIII", raw[4:20])
    if version != TRAJ_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n < 1 or m < 1:
        raise FormatError(f"{path}: header declares state_dim={n}, action_dim={m}")
    pos = 20 + 4 * count
    if len(raw) < pos:
        raise FormatError(f"{path}: truncated length table")
    lengths = struct.unpack(f"<{count}I", raw[20:pos])
    expected = pos + 8 * sum((t + 1) * n + t * m for t in lengths)
    if len(raw) != expected:
        raise FormatError(f"{path}: size {len(raw)} bytes, header implies {expected}")
    states, actions = [], []
    for t in lengths:
        s = np.frombuffer(raw, dtype="<f8", count=(t + 1) * n, offset=pos).reshape(t + 1, n)
        pos += 8 * (t + 1) * n
        a = np.frombuffer(raw, dtype="<f8", count=t * m, offset=pos).reshape(t, m)
        pos += 8 * t * m
        states.append(s.astype(np.float64))
        actions.append(a.astype(np.float64))
    return TrajectoryBatch(states, actions)


def write_trajectory_csv(path, batch):
    """One row per step: trajectory, step, state components, action components."""
    n, m = batch.state_dim, batch.action_dim
    header = (["trajectory", "step"] + [f"x{i}" for i in range(n)]
              + [f"u{j}" for j in range(m)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, (s, a) in enumerate(zip(batch.states, batch.actions)):
            for t in range(len(s)):
                act = a[t] if t < len(a) else np.full(m, np.nan)
                w.writerow([k, t] + [f"{v:.9g}" for v in s[t]] + [f"{v:.9g}" for v in act])


def split_dataset(items, train_fraction, seed):
    """Shuffle deterministically and split into ``(train, validation)`` lists."""
    items = list(items)
    if not items:
        raise DomainError("cannot split an empty collection")
    if not 0.0 < train_fraction < 1.0:
        raise DomainError("train_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(items))
    n_train = int(round(train_fraction * len(items)))
    return [items[i] for i in order[:n_train]], [items[i] for i in order[n_train:]]


def split_indices(n, train_fraction, seed):
    train, val = split_dataset(range(n), train_fraction, seed)
    return np.array(train, dtype=np.int64), np.array(val, dtype=np.int64)


# ---- synthetic systems --------------------------------------------------

def _trajectory_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def tripod_offsets(n):
    """Target phase differences ``xi_j - xi_i``: 0 within a group, pi across."""
    group = np.arange(n) % 2
    return np.pi * (group[None, :] - group[:, None])


def cpg_rates(xi, u, slowdown, k, omega, coupling, offsets):
    """Phase velocities ``exp(-k e) omega + u + a(xi)`` with Kuramoto coupling."""
    n = xi.shape[-1]
    diff = xi[None, :] - xi[:, None] - offsets
    np.fill_diagonal(diff, 0.0)
    attract = coupling / n * np.sin(diff).sum(axis=1)
    return np.exp(-k * slowdown) * omega + u + attract


def generate_cpg_trajectories(n_oscillators, n_trajectories, steps, dt=0.02, k=1.0,
                              omega=2.0 * np.pi, coupling=8.0, noise_std=0.0, seed=0,
                              action_scale=0.5, return_phases=False):
    """Coupled phase oscillators observed through ``(sin xi, cos xi)``.

    The control input is a per-oscillator frequency perturbation drawn from a
    smooth scripted policy (random sinusoids). The leg-error signal that slows
    an oscillator is emulated by a clipped random walk in ``[0, 1]``.
    """
    if n_oscillators < 1 or n_trajectories < 1 or steps < 1:
        raise DomainError("counts must be positive")
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    offsets = tripod_offsets(n_oscillators)
    states, actions, phases = [], [], []
    for i in range(n_trajectories):
        rng = _trajectory_rng(seed, i)
        xi = rng.uniform(0.0, 2.0 * np.pi, n_oscillators)
        freq = rng.uniform(0.05, 0.3, n_oscillators)
        shift = rng.uniform(0.0, 2.0 * np.pi, n_oscillators)
        slowdown = rng.uniform(0.0, 1.0, n_oscillators)
        traj_xi = np.empty((steps + 1, n_oscillators))
        traj_u = np.empty((steps, n_oscillators))
        traj_xi[0] = xi
        for t in range(steps):
            u = action_scale * np.sin(2.0 * np.pi * freq * t * dt + shift)
            slowdown = np.clip(slowdown + 0.1 * np.sqrt(dt) * rng.standard_normal(n_oscillators), 0.0, 1.0)
            xi = xi + dt * cpg_rates(xi, u, slowdown, k, omega, coupling, offsets)
            traj_xi[t + 1] = xi
            traj_u[t] = u
        obs = np.concatenate([np.sin(traj_xi), np.cos(traj_xi)], axis=1)
        if noise_std > 0.0:
            obs = obs + noise_std * rng.standard_normal(obs.shape)
        states.append(obs)
        actions.append(traj_u)
        phases.append(traj_xi)
    batch = TrajectoryBatch(states, actions)
    return (batch, phases) if return_phases else batch


POINTMASS_GRAVITY = 1.0
POINTMASS_MAIN_GAIN = 1.0
POINTMASS_SIDE_TORQUE = 1.0
POINTMASS_SIDE_FORCE = 0.2
POINTMASS_BURN = 0.02


def pointmass_step(state, action, dt):
    """One explicit Euler step of the planar lander.

    ``state = (x, y, vx, vy, theta, omega, fuel)`` (orientation as an angle);
    ``action = (main, left, right)`` thrusts.
    """
    x, y, vx, vy, th, om, fuel = state
    main, left, right = action
    up = np.array([-np.sin(th), np.cos(th)])
    side = np.array([np.cos(th), np.sin(th)])
    acc = (POINTMASS_MAIN_GAIN * main * up + POINTMASS_SIDE_FORCE * (left - right) * side
           + np.array([0.0, -POINTMASS_GRAVITY]))
    alpha = POINTMASS_SIDE_TORQUE * (left - right)
    return np.array([
        x + dt * vx,
        y + dt * vy,
        vx + dt * acc[0],
        vy + dt * acc[1],
        th + dt * om,
        om + dt * alpha,
        fuel - dt * POINTMASS_BURN * (main + 0.5 * (left + right)),
    ])


def pointmass_observation(state):
    """8-dim observation ``(x, y, vx, vy, cos theta, sin theta, omega, fuel)``."""
    x, y, vx, vy, th, om, fuel = state
    return np.array([x, y, vx, vy, np.cos(th), np.sin(th), om, fuel])


def landing_policy(state, target_x, thrust_limit):
    """Proportional-derivative controller descending toward ``(target_x, 0)``."""
    x, y, vx, vy, th, om, _ = state
    g = POINTMASS_GRAVITY
    ax_des = 0.3 * (target_x - x) - 0.8 * vx
    th_des = np.clip(-ax_des / g, -0.5, 0.5)
    alpha_des = 8.0 * (th_des - th) - 5.0 * om
    side = alpha_des / POINTMASS_SIDE_TORQUE
    vy_des = -0.4 * y
    ay_des = 2.0 * (vy_des - vy)
    main = (g + ay_des) / max(np.cos(th), 0.5) / POINTMASS_MAIN_GAIN
    return np.array([main, max(side, 0.0), max(-side, 0.0)])


def generate_pointmass_trajectories(n_trajectories, steps, dt=0.05, thrust_limit=2.0,
                                    noise_std=0.0, seed=0, action_noise=0.1,
                                    return_latent=False):
    """Planar three-thruster lander under a scripted landing policy.

    Observations are 8-dimensional, actions 3-dimensional. Actions are the
    policy output plus Ornstein-Uhlenbeck exploration noise of relative scale
    ``action_noise``, clipped to ``[0, thrust_limit]``. ``noise_std`` adds
    Gaussian observation noise.
    """
    if n_trajectories < 1 or steps < 1:
        raise DomainError("counts must be positive")
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    states, actions, latent = [], [], []
    for i in range(n_trajectories):
        rng = _trajectory_rng(seed, i)
        s = np.array([
            rng.uniform(-3.0, 3.0), rng.uniform(4.0, 6.0),
            rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
            rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2), 1.0,
        ])
        target = rng.uniform(-2.0, 2.0)
        ou = np.zeros(3)
        raw = np.empty((steps + 1, 7))
        acts = np.empty((steps, 3))
        raw[0] = s
        for t in range(steps):
            ou = ou - 0.2 * ou + action_noise * thrust_limit * np.sqrt(0.4) * rng.standard_normal(3)
            a = np.clip(landing_policy(s, target, thrust_limit) + ou, 0.0, thrust_limit)
            s = pointmass_step(s, a, dt)
            raw[t + 1] = s
            acts[t] = a
        obs = np.array([pointmass_observation(r) for r in raw])
        if noise_std > 0.0:
            obs = obs + noise_std * rng.standard_normal(obs.shape)
        states.append(obs)
        actions.append(acts)
        latent.append(raw)
    batch = TrajectoryBatch(states, actions)
    return (batch, latent) if return_latent else batch


def generate_linear_latent_trajectories(n_trajectories, steps, decay, control, observation,
                                        noise_std=0.0, seed=0, action_scale=1.0):
    """Ground-truth diagonal linear latent system with a linear observation map.

    ``z_{t+1} = decay * z_t + control @ u_t`` and ``x_t = observation @ z_t``.
    Actions are smooth random sinusoids of amplitude ``action_scale``.
    """
    decay = np.asarray(decay, dtype=float)
    control = np.atleast_2d(np.asarray(control, dtype=float))
    observation = np.atleast_2d(np.asarray(observation, dtype=float))
    d, m = control.shape
    if decay.shape != (d,) or observation.shape[1] != d:
        raise DimensionError("decay, control and observation shapes disagree")
    states, actions, latents = [], [], []
    for i in range(n_trajectories):
        rng = _trajectory_rng(seed, i)
        z = rng.uniform(-1.0, 1.0, d)
        freq = rng.uniform(0.01, 0.08, m)
        shift = rng.uniform(0.0, 2.0 * np.pi, m)
        zs = np.empty((steps + 1, d))
        us = np.empty((steps, m))
        zs[0] = z
        for t in range(steps):
            u = action_scale * np.sin(2.0 * np.pi * freq * t + shift)
            z = decay * z + control @ u
            zs[t + 1] = z
            us[t] = u
        x = zs @ observation.T
        if noise_std > 0.0:
            x = x + noise_std * rng.standard_normal(x.shape)
        states.append(x)
        actions.append(us)
        latents.append(zs)
    return TrajectoryBatch(states, actions), latents
