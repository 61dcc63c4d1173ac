"""Named parameter storage and the Adam update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Named trainable tensors plus Adam moment buffers and a step counter."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.first_moment: dict[str, np.ndarray] = {}
        self.second_moment: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.first_moment[name] = np.zeros_like(t.value)
        self.second_moment[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def gradients(self):
        """Gradient arrays by name; parameters without a gradient give zeros."""
        return {k: (np.zeros_like(p.value) if p.grad is None else p.grad)
                for k, p in self.params.items()}

    def state_dict(self):
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        unexpected = set(state) - set(self.params)
        if missing or unexpected:
            raise KeyError(f"missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for k, v in state.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].value = v.copy()


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(store, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
    """Bias-corrected Adam update of every parameter; clears gradients."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = p.grad
        m = store.first_moment[name]
        v = store.second_moment[name]
        if g is None:
            m *= beta1
            v *= beta2
        else:
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
        p.value = p.value - learning_rate * (m / c1) / (np.sqrt(v / c2) + epsilon)
        p.grad = None
    return store
