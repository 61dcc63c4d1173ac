"""
Latent dynamics for a point-mass lander
=======================================

Encode the state, step the latent with z' = a(z) z + B(z) u and decode.
The T-step rollout uses only the first state and the action sequence.
"""
import numpy as np

from qvae.dynamics import predict_states
from qvae.harness import runner
from qvae.harness.config import config_from_text

cfg = config_from_text("""
[experiment]
kind = dynamics_train
[model]
q = 0.8
beta = 0.01
gamma = 0.1
[train]
epochs = 5
[data]
n_train_trajectories = 40
n_test_trajectories = 10
steps = 100
""")
train, test = runner.generate_trajectory_sets(cfg)
model = runner.build_dynamics_model(cfg, train.state_dim, train.action_dim, seed=0)
rows, scores, status = runner.train_dynamics_trial(cfg, 0, train, test, model=model)
for r in rows:
    print(f"epoch {r['epoch']}: loss {r['loss_total']:.3f} validation state MSE {r['val_state_mse']:.4f}")
print(status, scores)

# roll one test trajectory forward from its first state
pred = predict_states(model, test.states[0][0], test.actions[0])
err = np.mean((pred.states - test.states[0][1:]) ** 2, axis=1)
print("diverged:", pred.diverged)
for t in (0, 9, 49, 99):
    print(f"step {t + 1}: state MSE {err[t]:.4f}")
