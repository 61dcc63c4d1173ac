"""Finite-difference verification of every differentiable component.

Each check builds a scalar ``f(params)`` twice: once through the graph for
the analytic gradient and once per perturbed coordinate for central
differences. The error is ``|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)`` over
the concatenated gradient vector. Objectives that contain the frozen
``beta_q^{-1}`` factor are checked with that factor precomputed, since the
gradient deliberately ignores its dependence on the parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.nn import MLP
from ..autodiff.optim import ParameterStore
from ..dynamics import LatentDynamicsModel, dynamics_loss
from ..vae import (
    OBJECTIVE_MODES, VAE, EncoderDecoderSpec, QvaeHyperParams, beta_q_inverse,
    elbo_loss, reparameterize,
)
from .csvio import emit_csv

STEP = 1e-6
TOLERANCE = 1e-4
GRADCHECK_FIELDS = ["component", "method", "n_params", "relative_error", "passed"]


@dataclass
class GradCheck:
    component: str
    method: str
    n_params: int
    relative_error: float
    passed: bool

    def as_row(self):
        return dict(self.__dict__)


def relative_error(analytic, numeric):
    a = np.concatenate([np.ravel(g) for g in analytic])
    n = np.concatenate([np.ravel(g) for g in numeric])
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


def numerical_gradient(fn, arrays, step=STEP):
    """Central differences of ``fn()`` with respect to each array, in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn()
            flat[i] = orig - step
            down = fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def check_graph(component, build, arrays, step=STEP, tol=TOLERANCE):
    """``build(tensors) -> scalar Tensor``; ``arrays`` are the inputs to vary."""
    arrays = [np.array(a, dtype=float) for a in arrays]
    leaves = [T.Tensor(a, requires_grad=True) for a in arrays]
    # leaves share memory with arrays so numerical perturbation is seen by build
    for leaf, a in zip(leaves, arrays):
        leaf.value = a
    T.backward(build(leaves))
    analytic = [leaf.grad.copy() for leaf in leaves]
    numeric = numerical_gradient(lambda: build([T.Tensor(a) for a in arrays]).item(), arrays, step)
    err = relative_error(analytic, numeric)
    return GradCheck(component, "central_difference", sum(a.size for a in arrays), err, err < tol)


def check_store(component, store, loss_fn, step=STEP, tol=TOLERANCE):
    """Check ``loss_fn() -> scalar Tensor`` against every parameter in ``store``."""
    store.zero_grad()
    T.backward(loss_fn())
    analytic = [p.grad.copy() for _, p in store.items()]
    arrays = [p.value for _, p in store.items()]
    numeric = numerical_gradient(lambda: loss_fn().item(), arrays, step)
    store.zero_grad()
    err = relative_error(analytic, numeric)
    return GradCheck(component, "central_difference", sum(a.size for a in arrays), err, err < tol)


def _weighted(rng, shape):
    w = rng.standard_normal(shape)
    return lambda t: T.tsum(t * w)


def primitive_checks(seed=0, step=STEP, tol=TOLERANCE):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 4))
    B = rng.standard_normal((3, 4))
    row = rng.standard_normal(4)
    M = rng.standard_normal((4, 2))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    # keep clamp inputs well away from the bounds
    C = rng.choice([-1.0, 1.0], (3, 4)) * rng.uniform(0.1, 2.0, (3, 4))
    C[np.abs(np.abs(C) - 0.8) < 0.05] += 0.1
    w34, w32, w3 = _weighted(rng, (3, 4)), _weighted(rng, (3, 2)), _weighted(rng, (3,))
    w12 = _weighted(rng, (12,))
    cases = [
        ("add", lambda t: w34(T.add(t[0], t[1])), [A, row]),
        ("subtract", lambda t: w34(T.subtract(t[0], t[1])), [A, B]),
        ("multiply", lambda t: w34(T.multiply(t[0], t[1])), [A, B[:1]]),
        ("matmul", lambda t: w32(T.matmul(t[0], t[1])), [A, M]),
        ("exp", lambda t: w34(T.exp(t[0])), [A]),
        ("log", lambda t: w34(T.log(t[0])), [pos]),
        ("expm1", lambda t: w34(T.expm1(t[0])), [A]),
        ("negative", lambda t: w34(T.negative(t[0])), [A]),
        ("sum", lambda t: w3(T.tsum(t[0], axis=1)), [A]),
        ("mean", lambda t: w3(T.mean(t[0], axis=1)), [A]),
        ("square", lambda t: w34(T.square(t[0])), [A]),
        ("sigmoid", lambda t: w34(T.sigmoid(t[0])), [A]),
        ("clamp", lambda t: w34(T.clamp(t[0], -0.8, 0.8)), [C]),
        ("add_bias", lambda t: w34(T.add_bias(t[0], t[1])), [A, row]),
        ("reshape", lambda t: w12(T.reshape(t[0], (12,))), [A]),
        ("swish", lambda t: w34(T.swish(t[0])), [A]),
        ("layer_norm", lambda t: w34(T.layer_norm(t[0], t[1], t[2])),
         [A, rng.uniform(0.5, 1.5, 4), rng.standard_normal(4)]),
    ]
    results = []
    for name, build, arrays in cases:
        results.append(check_graph(name, build, arrays, step, tol))
    results.append(stop_gradient_check(A))
    return results


def stop_gradient_check(x):
    """The gradient through ``stop_gradient`` is zero by definition."""
    leaf = T.Tensor(np.array(x, dtype=float), requires_grad=True)
    T.backward(T.tsum(T.square(T.stop_gradient(leaf))) + T.tsum(leaf) * 0.0)
    err = float(np.max(np.abs(leaf.grad)))
    return GradCheck("stop_gradient", "exact_zero", leaf.value.size, err, err == 0.0)


def mlp_check(seed=0, step=STEP, tol=TOLERANCE):
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    net = MLP(store, "mlp", 4, (5, 4, 3), 2, rng)
    x = rng.standard_normal((6, 4))
    w = rng.standard_normal((6, 2))
    return check_store("mlp_3_hidden", store, lambda: T.tsum(net(x) * w), step, tol)


def _small_hyper(mode, **kw):
    base = dict(q=0.8, beta=2.0 if mode != "vae" else 1.0, latent_dim=2,
                objective_mode=mode)
    base.update(kw)
    return QvaeHyperParams(**base)


def elbo_checks(seed=0, step=STEP, tol=TOLERANCE):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.05, 0.95, (5, 6))
    results = []
    for mode in OBJECTIVE_MODES:
        hyper = _small_hyper(mode)
        model = VAE(EncoderDecoderSpec(6, (5, 4), (4, 5)), hyper, seed=seed)
        noise = rng.standard_normal((5, 2))
        posterior = model.encode(x)
        z = reparameterize(posterior, noise)
        coef = beta_q_inverse(model.prior(), posterior, z, hyper.q, hyper.coefficient_clamp).value
        model.store.zero_grad()

        def loss(model=model, hyper=hyper, noise=noise, coef=coef):
            return elbo_loss(model, x, hyper, noise, coefficient=coef).node
        results.append(check_store(f"elbo_{mode}", model.store, loss, step, tol))
    return results


def dynamics_check(seed=0, step=STEP, tol=TOLERANCE):
    rng = np.random.default_rng(seed)
    hyper = QvaeHyperParams(q=0.8, beta=0.5, gamma=0.3, latent_dim=2,
                            decoder_family="gaussian", objective_mode="q_vae")
    model = LatentDynamicsModel(3, 2, hyper, version=None, seed=seed,
                                encoder_hidden=(5, 4), dynamics_hidden=(4,))
    x = rng.standard_normal((4, 3))
    u = rng.standard_normal((4, 2))
    xn = rng.standard_normal((4, 3))
    noise = rng.standard_normal((4, 2))
    posterior = model.encode(x)
    z = reparameterize(posterior, noise)
    coef = beta_q_inverse(model.vae.prior(), posterior, z, hyper.q, hyper.coefficient_clamp).value
    model.store.zero_grad()
    return check_store("dynamics_loss", model.store,
                       lambda: dynamics_loss(model, x, u, xn, hyper, noise, coefficient=coef).node,
                       step, tol)


def corrupted_vjp_check(seed=0, step=STEP, tol=TOLERANCE):
    """Negative control: a swish whose VJP is off by 1% must fail the check."""
    rng = np.random.default_rng(seed)

    def bad_swish(a):
        out = T.swish(a)
        inner = out._vjp
        out._vjp = lambda g: tuple(1.01 * p for p in inner(g))
        return out
    w = _weighted(rng, (3, 4))
    res = check_graph("corrupted_swish", lambda t: w(bad_swish(t[0])),
                      [rng.standard_normal((3, 4))], step, tol)
    return res


def run_all(seed=0, step=STEP, tol=TOLERANCE):
    """All component checks, each component reported once."""
    return (primitive_checks(seed, step, tol) + [mlp_check(seed, step, tol)]
            + elbo_checks(seed, step, tol) + [dynamics_check(seed, step, tol)])


def grad_check(out_dir, seed=0, step=STEP, tol=TOLERANCE):
    results = run_all(seed, step, tol)
    control = corrupted_vjp_check(seed, step, tol)
    rows = [r.as_row() for r in results]
    rows.append({**control.as_row(), "component": "negative_control_corrupted_swish",
                 "passed": not control.passed})
    path = emit_csv(rows, Path(out_dir) / "grad_check.csv", GRADCHECK_FIELDS)
    return results, control, path
