"""
Deformed logarithms and the Tsallis divergence
==============================================

ln_q is additive under the q-product and collapses to ln at q = 1. The
divergence between Gaussians has a closed form that we compare against a
Monte Carlo estimate.
"""
import numpy as np

from qvae.qmath import DiagonalGaussian, kl_gauss, q_exp, q_log, q_product
from qvae.qmath import tsallis_kl_gauss, tsallis_kl_monte_carlo

# ln_q for a few q; q = 1 is the ordinary logarithm
x = np.array([0.5, 1.0, 2.0, 4.0])
for q in (0.5, 0.8, 1.0, 1.2):
    print(f"q={q}: ln_q {np.round(q_log(x, q), 4)}")

# q_exp inverts q_log
print("q_exp(q_log(2.5)) =", q_exp(q_log(2.5, 0.8), 0.8))

# pseudo-additivity: ln_q(xy) = ln_q x + ln_q y + (1 - q) ln_q x ln_q y
q = 0.7
a, b = q_log(2.0, q), q_log(3.0, q)
print("pseudo-additivity gap:", q_log(6.0, q) - (a + b + (1 - q) * a * b))

# under the q-product ln_q is plainly additive
print("q-product additivity gap:", q_log(q_product(2.0, 3.0, q), q) - (a + b))

# the divergence between N(0, 1) and N(1, 1)
p1 = DiagonalGaussian(np.zeros(1), np.zeros(1))
p2 = DiagonalGaussian(np.ones(1), np.zeros(1))
for q in (0.5, 0.8, 1.0 - 1e-6, 1.2):
    est, se = tsallis_kl_monte_carlo(p1, p2, q, 200_000, seed=0)
    print(f"q={q:.6f}: closed {tsallis_kl_gauss(p1, p2, q):.5f}  MC {est:.5f} +- {se:.5f}")
print("KL:", kl_gauss(p1, p2))
