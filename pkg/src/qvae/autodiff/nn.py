"""Fully connected building blocks on top of :mod:`qvae.autodiff.tensor`."""
from __future__ import annotations

import numpy as np

from . import tensor as T


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear:
    """Affine map ``x @ W + b`` with parameters registered in a store."""

    def __init__(self, store, name, fan_in, fan_out, rng):
        self.weight = store.add(f"{name}.weight", glorot_uniform(rng, fan_in, fan_out))
        self.bias = store.add(f"{name}.bias", np.zeros(fan_out))
        self.fan_in = fan_in
        self.fan_out = fan_out

    def __call__(self, x):
        return T.add_bias(T.matmul(x, self.weight), self.bias)


class LayerNorm:
    def __init__(self, store, name, width, epsilon=1e-5):
        self.gain = store.add(f"{name}.gain", np.ones(width))
        self.bias = store.add(f"{name}.bias", np.zeros(width))
        self.epsilon = epsilon

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias, self.epsilon)


class MLP:
    """Hidden blocks of Linear -> LayerNorm -> Swish, then linear readout(s).

    ``out`` is an int for a single readout or a tuple of sizes for several
    independent heads reading the last hidden activation, e.g. ``(d, d)``
    for a mean and a log-variance.
    """

    def __init__(self, store, name, in_dim, hidden, out, rng):
        hidden = [int(w) for w in hidden]
        if in_dim < 1 or any(w < 1 for w in hidden):
            raise ValueError(f"bad layer widths {in_dim}, {hidden}")
        self.in_dim = int(in_dim)
        self.hidden = []
        prev = self.in_dim
        for i, w in enumerate(hidden):
            self.hidden.append((Linear(store, f"{name}.fc{i}", prev, w, rng),
                                LayerNorm(store, f"{name}.ln{i}", w)))
            prev = w
        self.single = isinstance(out, (int, np.integer))
        sizes = (int(out),) if self.single else tuple(int(o) for o in out)
        self.heads = [Linear(store, f"{name}.head{j}", prev, o, rng)
                      for j, o in enumerate(sizes)]

    def features(self, x):
        h = T.as_tensor(x)
        for lin, norm in self.hidden:
            h = T.swish(norm(lin(h)))
        return h

    def __call__(self, x):
        h = self.features(x)
        outs = tuple(head(h) for head in self.heads)
        return outs[0] if self.single else outs
