"""
The experiment harness from Python
==================================

Every subcommand of the ``qvae`` program reads a config and writes CSVs
tagged with the config hash and seed.
"""
import tempfile
from pathlib import Path

from qvae.harness import cli, read_csv

out = Path(tempfile.mkdtemp())
cfg = out / "tiny.ini"
cfg.write_text("""
[experiment]
kind = dynamics_train
trials = 2
[train]
epochs = 2
[data]
n_train_trajectories = 10
n_test_trajectories = 4
steps = 40
[sweep]
points = beta=0 q=1; beta=0.01 q=0.8
""")
print("train-dynamics exit:", cli.main(["train-dynamics", "--config", str(cfg), "--out", str(out)]))
for row in read_csv(out / "dynamics_summary.csv"):
    print(row["point"], row["median_one_step_state"], row["median_t_step_state"])
print("eval-dynamics exit:", cli.main(["eval-dynamics", "--config", str(cfg), "--out", str(out)]))
print("outputs:", sorted(p.name for p in out.iterdir()))
