"""
Coupled oscillators as a trajectory source
==========================================

Six phase oscillators lock into a tripod gait. The action is a small
frequency perturbation per oscillator; states are (sin, cos) pairs.
"""
import numpy as np

from qvae.data import generate_cpg_trajectories, tripod_offsets

batch, phases = generate_cpg_trajectories(6, 3, 500, return_phases=True)
print("state dim", batch.state_dim, "action dim", batch.action_dim, "lengths", batch.lengths)

offsets = tripod_offsets(6)
for i, ph in enumerate(phases):
    for t in (0, 100, 500):
        xi = ph[t]
        d = np.angle(np.exp(1j * (xi[None, :] - xi[:, None] - offsets)))
        print(f"trajectory {i} step {t}: max pattern error {np.max(np.abs(d)):.3f} rad")
