"""
Reverse-mode differentiation and gradient checks
================================================

Gradients flow backwards through a graph of numpy operations. Every
differentiable component is checked against central finite differences.
"""
import numpy as np

from qvae.autodiff import tensor as T
from qvae.harness import gradcheck

# f(x, w) = sum(swish(x @ w)); backward fills .grad on the leaves
rng = np.random.default_rng(0)
x = T.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = T.Tensor(rng.normal(size=(3, 2)), requires_grad=True)
f = T.tsum(T.swish(x @ w))
f.backward()
print("f =", f.item())
print("df/dw =\n", w.grad)

# the same gradient by finite differences; fn reads the perturbed arrays in place
def f_numeric():
    s = x.value @ w.value
    return float(np.sum(s / (1 + np.exp(-s))))


num = gradcheck.numerical_gradient(f_numeric, [x.value, w.value])
print("relative error:", gradcheck.relative_error([x.grad, w.grad], num))

# the full report: primitives, layers, every objective and the dynamics loss
for r in gradcheck.run_all():
    print(f"{r.component:24s} {r.relative_error:.2e} {'ok' if r.passed else 'FAIL'}")

# a deliberately wrong vector-Jacobian product is caught
bad = gradcheck.corrupted_vjp_check()
print("corrupted swish:", f"{bad.relative_error:.2e}", "caught" if not bad.passed else "missed")
