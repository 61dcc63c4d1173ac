"""Experiment runners behind the command-line interface.

Every trial owns its model, random streams and output rows; trials run
sequentially or in a process pool and their rows are assembled in trial
order, so the CSVs do not depend on ``parallel``. The seed of trial ``i``
is ``base_seed + i``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import qmath
from ..autodiff.checkpoint import read_checkpoint, write_checkpoint
from ..autodiff.optim import adam_step
from ..data import (
    generate_cpg_trajectories, generate_pointmass_trajectories,
    load_mnist_idx, read_trajectory_file, split_indices, write_trajectory_file,
)
from ..dynamics import LatentDynamicsModel, dynamics_loss, evaluate_prediction, transition
from ..errors import ConfigError, QvaeError
from ..metrics import bce, mardia_kurtosis, mse
from ..vae import VAE, elbo_loss, reparameterize
from .csvio import emit_csv

log = logging.getLogger(__name__)

EPOCH_FIELDS = [
    "config_hash", "point", "trial", "seed", "epoch", "loss_total", "loss_reconstruction",
    "loss_regularizer", "beta_q_inverse", "loss_latent", "test_kurtosis", "test_bce", "status",
]
SWEEP_FIELDS = [
    "config_hash", "point", "beta", "q", "objective_mode", "trial", "seed",
    "final_kurtosis", "final_bce", "status",
]
SWEEP_SUMMARY_FIELDS = [
    "config_hash", "point", "beta", "q", "objective_mode", "n_ok",
    "median_kurtosis", "median_bce",
]
DYN_EPOCH_FIELDS = [
    "config_hash", "point", "trial", "seed", "epoch", "loss_total", "loss_reconstruction",
    "loss_regularizer", "beta_q_inverse", "loss_latent", "val_state_mse", "status",
]
DYN_FIELDS = [
    "config_hash", "point", "beta", "q", "gamma", "network", "trial", "seed",
    "one_step_state", "one_step_latent", "t_step_state", "t_step_latent",
    "diverged_state", "diverged_latent", "n_test", "status",
]
DYN_SUMMARY_FIELDS = [
    "config_hash", "point", "beta", "q", "gamma", "network", "n_ok",
    "median_one_step_state", "median_one_step_latent", "median_t_step_state",
    "median_t_step_latent", "trials_with_latent_divergence",
]


@dataclass
class RunResult:
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    failures: int = 0
    paths: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.failures == 0


def point_label(point):
    return " ".join(f"{k}={v}" for k, v in point) if point else "base"


def _map_trials(fn, arg_list, parallel):
    if parallel <= 1 or len(arg_list) <= 1:
        return [fn(*args) for args in arg_list]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        futures = [pool.submit(fn, *args) for args in arg_list]
        return [f.result() for f in futures]


# ---- MNIST ----------------------------------------------------------------

def load_mnist_pair(cfg):
    d = cfg.data
    train = load_mnist_idx(cfg.resolve(d.train_images), cfg.resolve(d.train_labels))
    test = load_mnist_idx(cfg.resolve(d.test_images), cfg.resolve(d.test_labels))
    train = train.subset(slice(0, cfg.train.train_limit))
    test = test.subset(slice(0, cfg.train.test_limit))
    return train.images, test.images


def evaluate_mnist(model, test_images, eval_noise):
    """Test kurtosis and BCE from one fixed posterior sample per test input."""
    posterior = model.encode(test_images)
    z = reparameterize(posterior, eval_noise)
    probs = model.decode(z).value
    return mardia_kurtosis(z.value), bce(test_images, probs)


def train_mnist_trial(cfg, trial, train_images, test_images, point=(), checkpoint_dir=None):
    """Train one model; returns ``(epoch_rows, final_metrics_or_None)``."""
    hyper = cfg.hyper
    seed = cfg.base_seed + trial
    label = point_label(point)
    base = {"config_hash": cfg.config_hash, "point": label, "trial": trial, "seed": seed}
    model = VAE(cfg.encoder_decoder_spec(train_images.shape[1]), hyper, seed=seed)
    rng = np.random.default_rng(seed)
    eval_noise = np.random.default_rng([seed, 1]).standard_normal((len(test_images), hyper.latent_dim))
    opt = hyper.optimizer
    bs = cfg.train.batch_size
    rows = []
    final = None
    for epoch in range(1, cfg.train.epochs + 1):
        sums = np.zeros(5)
        count = 0
        try:
            order = rng.permutation(len(train_images))
            for start in range(0, len(order), bs):
                x = train_images[order[start:start + bs]]
                noise = rng.standard_normal((len(x), hyper.latent_dim))
                loss = elbo_loss(model, x, hyper, noise)
                if not np.isfinite(loss.total):
                    raise QvaeError(f"non-finite loss at epoch {epoch}")
                loss.backward()
                adam_step(model.store, opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon)
                sums += len(x) * np.array([loss.total, loss.reconstruction_term,
                                           loss.regularizer_term, loss.beta_q_inverse,
                                           loss.latent_consistency_term])
                count += len(x)
            kurt, err = evaluate_mnist(model, test_images, eval_noise)
        except (QvaeError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("trial %d failed: %s", trial, exc)
            rows.append({**base, "epoch": epoch, "loss_total": np.nan, "loss_reconstruction": np.nan,
                         "loss_regularizer": np.nan, "beta_q_inverse": np.nan, "loss_latent": np.nan,
                         "test_kurtosis": np.nan, "test_bce": np.nan,
                         "status": f"failed: {exc}".replace("\n", " ")})
            return rows, None
        means = sums / count
        rows.append({**base, "epoch": epoch, "loss_total": means[0], "loss_reconstruction": means[1],
                     "loss_regularizer": means[2], "beta_q_inverse": means[3], "loss_latent": means[4],
                     "test_kurtosis": kurt, "test_bce": err, "status": "ok"})
        log.info("trial %d %s epoch %d loss %.4f kurtosis %.4f bce %.4f",
                 trial, label, epoch, means[0], kurt, err)
        final = {"final_kurtosis": kurt, "final_bce": err}
    if checkpoint_dir is not None:
        name = f"checkpoint_{label.replace(' ', '_').replace('=', '')}_trial{trial}.qvae"
        write_checkpoint(Path(checkpoint_dir) / name, model.store)
    return rows, final


def run_training(cfg, out_dir, trials=None, parallel=None):
    """Train ``trials`` models; writes ``train_epochs.csv`` and checkpoints."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trials = cfg.trials if trials is None else trials
    parallel = cfg.parallel if parallel is None else parallel
    train, test = load_mnist_pair(cfg)
    results = _map_trials(train_mnist_trial,
                          [(cfg, t, train, test, (), out) for t in range(trials)], parallel)
    result = RunResult()
    for rows, final in results:
        result.rows.extend(rows)
        result.failures += final is None
    result.paths["epochs"] = emit_csv(result.rows, out / "train_epochs.csv", EPOCH_FIELDS)
    return result


def _sweep_trial(cfg, point, trial, train, test):
    point_cfg = cfg.with_overrides(**dict(point))
    return train_mnist_trial(point_cfg, trial, train, test, point)


def run_sweep(cfg, out_dir, trials=None, parallel=None):
    """One row per (grid point, trial) plus a median summary per point."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trials = cfg.trials if trials is None else trials
    parallel = cfg.parallel if parallel is None else parallel
    points = [tuple(p.items()) for p in cfg.grid()]
    if not points:
        raise ConfigError("sweep grid is empty")
    train, test = load_mnist_pair(cfg)
    jobs = [(cfg, p, t, train, test) for p in points for t in range(trials)]
    results = _map_trials(_sweep_trial, jobs, parallel)
    result = RunResult()
    epoch_rows = []
    for (_, p, t, _, _), (rows, final) in zip(jobs, results):
        pc = cfg.with_overrides(**dict(p))
        epoch_rows.extend(rows)
        row = {"config_hash": cfg.config_hash, "point": point_label(p), "beta": pc.hyper.beta,
               "q": pc.hyper.q, "objective_mode": pc.hyper.objective_mode, "trial": t,
               "seed": cfg.base_seed + t}
        if final is None:
            result.failures += 1
            row.update(final_kurtosis=np.nan, final_bce=np.nan, status=rows[-1]["status"])
        else:
            row.update(final, status="ok")
        result.rows.append(row)
    for p in points:
        pc = cfg.with_overrides(**dict(p))
        ok = [r for r in result.rows if r["point"] == point_label(p) and r["status"] == "ok"]
        result.summary.append({
            "config_hash": cfg.config_hash, "point": point_label(p), "beta": pc.hyper.beta,
            "q": pc.hyper.q, "objective_mode": pc.hyper.objective_mode, "n_ok": len(ok),
            "median_kurtosis": float(np.median([r["final_kurtosis"] for r in ok])) if ok else np.nan,
            "median_bce": float(np.median([r["final_bce"] for r in ok])) if ok else np.nan,
        })
    result.paths["sweep"] = emit_csv(result.rows, out / "sweep.csv", SWEEP_FIELDS)
    result.paths["summary"] = emit_csv(result.summary, out / "sweep_summary.csv", SWEEP_SUMMARY_FIELDS)
    result.paths["epochs"] = emit_csv(epoch_rows, out / "sweep_epochs.csv", EPOCH_FIELDS)
    return result


# ---- trajectories -----------------------------------------------------------

def generate_trajectory_sets(cfg):
    """Train and test trajectory sets from the ``[data]`` generator settings."""
    d = cfg.data
    n_total = d.n_train_trajectories + d.n_test_trajectories
    if d.generator == "pointmass":
        batch = generate_pointmass_trajectories(n_total, d.steps, dt=d.dt, thrust_limit=d.thrust_limit,
                                                noise_std=d.noise_std, seed=d.seed)
    elif d.generator == "cpg":
        batch = generate_cpg_trajectories(d.n_oscillators, n_total, d.steps, dt=d.dt,
                                          noise_std=d.noise_std, seed=d.seed)
    else:
        raise ConfigError(f"unknown generator {d.generator!r}")
    idx = np.arange(n_total)
    return batch.subset(idx[:d.n_train_trajectories]), batch.subset(idx[d.n_train_trajectories:])


def trajectory_data(cfg):
    d = cfg.data
    if d.train_trajectories and d.test_trajectories:
        return (read_trajectory_file(cfg.resolve(d.train_trajectories)),
                read_trajectory_file(cfg.resolve(d.test_trajectories)))
    return generate_trajectory_sets(cfg)


def gen_data(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = generate_trajectory_sets(cfg)
    paths = {"train": out / "train.traj", "test": out / "test.traj"}
    write_trajectory_file(paths["train"], train)
    write_trajectory_file(paths["test"], test)
    return RunResult(paths=paths)


def build_dynamics_model(cfg, state_dim, action_dim, seed):
    spec = cfg.encoder_decoder_spec(state_dim)
    version = cfg.network if cfg.network != "mnist" else "V3"
    return LatentDynamicsModel(state_dim, action_dim, cfg.hyper, version=version, seed=seed,
                               encoder_hidden=spec.encoder_hidden,
                               dynamics_hidden=cfg.dynamics_hidden or None)


def validation_state_mse(model, x, u, xn):
    z = model.encode_mean(x)
    with np.errstate(over="ignore", invalid="ignore"):
        pred = model.decode(transition(z, u, model.net).value).value
    return mse(pred, xn)


def train_dynamics_trial(cfg, trial, train_batch, test_batch, point=(), checkpoint_dir=None,
                         model=None):
    """Train one latent dynamics model and score it on the test trajectories.

    Returns ``(epoch_rows, scores_or_None, status)``. A supplied ``model``
    is used as-is; with ``epochs = 0`` it is only evaluated.
    """
    hyper = cfg.hyper
    seed = cfg.base_seed + trial
    label = point_label(point)
    base = {"config_hash": cfg.config_hash, "point": label, "trial": trial, "seed": seed}
    if model is None:
        model = build_dynamics_model(cfg, train_batch.state_dim, train_batch.action_dim, seed)
    x, u, xn = train_batch.tuples()
    tr_idx, val_idx = split_indices(len(x), 1.0 - cfg.train.validation_fraction, seed)
    rng = np.random.default_rng(seed)
    opt = hyper.optimizer
    bs = cfg.train.batch_size
    rows = []
    for epoch in range(1, cfg.train.epochs + 1):
        sums = np.zeros(5)
        count = 0
        try:
            order = tr_idx[rng.permutation(len(tr_idx))]
            for start in range(0, len(order), bs):
                b = order[start:start + bs]
                noise = rng.standard_normal((len(b), hyper.latent_dim))
                loss = dynamics_loss(model, x[b], u[b], xn[b], hyper, noise)
                if not np.isfinite(loss.total):
                    raise QvaeError(f"non-finite loss at epoch {epoch}")
                loss.backward()
                adam_step(model.store, opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon)
                sums += len(b) * np.array([loss.total, loss.reconstruction_term, loss.regularizer_term,
                                           loss.beta_q_inverse, loss.latent_consistency_term])
                count += len(b)
            val = validation_state_mse(model, x[val_idx], u[val_idx], xn[val_idx])
        except (QvaeError, FloatingPointError) as exc:
            status = f"failed: {exc}".replace("\n", " ")
            rows.append({**base, "epoch": epoch, "loss_total": np.nan, "loss_reconstruction": np.nan,
                         "loss_regularizer": np.nan, "beta_q_inverse": np.nan, "loss_latent": np.nan,
                         "val_state_mse": np.nan, "status": status})
            return rows, None, status
        means = sums / count
        rows.append({**base, "epoch": epoch, "loss_total": means[0], "loss_reconstruction": means[1],
                     "loss_regularizer": means[2], "beta_q_inverse": means[3], "loss_latent": means[4],
                     "val_state_mse": val, "status": "ok"})
        log.info("trial %d %s epoch %d loss %.4f val %.5f", trial, label, epoch, means[0], val)
    if checkpoint_dir is not None:
        name = f"dynamics_{label.replace(' ', '_').replace('=', '')}_trial{trial}.qvae"
        write_checkpoint(Path(checkpoint_dir) / name, model.store)
    scores = evaluate_prediction(test_batch, model)
    return rows, scores, "ok"


def _dynamics_job(cfg, point, trial, train_batch, test_batch, checkpoint_dir):
    pc = cfg.with_overrides(**dict(point))
    return train_dynamics_trial(pc, trial, train_batch, test_batch, point, checkpoint_dir)


def _dynamics_row(cfg, pc, point, trial, scores, status):
    row = {"config_hash": cfg.config_hash, "point": point_label(point), "beta": pc.hyper.beta,
           "q": pc.hyper.q, "gamma": pc.hyper.gamma, "network": pc.network, "trial": trial,
           "seed": cfg.base_seed + trial, "status": status}
    if scores is None:
        row.update(one_step_state=np.nan, one_step_latent=np.nan, t_step_state=np.nan,
                   t_step_latent=np.nan, diverged_state=0, diverged_latent=0, n_test=0)
    else:
        row.update(one_step_state=scores.one_step_state, one_step_latent=scores.one_step_latent,
                   t_step_state=scores.t_step_state, t_step_latent=scores.t_step_latent,
                   diverged_state=scores.diverged_state, diverged_latent=scores.diverged_latent,
                   n_test=scores.n_trajectories)
    return row


def summarize_dynamics(cfg, points, rows):
    summary = []
    for p in points:
        pc = cfg.with_overrides(**dict(p))
        ok = [r for r in rows if r["point"] == point_label(p) and r["status"] == "ok"]

        def med(key, ok=ok):
            return float(np.median([r[key] for r in ok])) if ok else np.nan
        summary.append({
            "config_hash": cfg.config_hash, "point": point_label(p), "beta": pc.hyper.beta,
            "q": pc.hyper.q, "gamma": pc.hyper.gamma, "network": pc.network, "n_ok": len(ok),
            "median_one_step_state": med("one_step_state"),
            "median_one_step_latent": med("one_step_latent"),
            "median_t_step_state": med("t_step_state"),
            "median_t_step_latent": med("t_step_latent"),
            "trials_with_latent_divergence": sum(r["diverged_latent"] > 0 for r in ok),
        })
    return summary


def run_dynamics_experiment(cfg, out_dir, trials=None, parallel=None, model_factory=None):
    """Train and evaluate latent dynamics for every grid point and trial.

    ``model_factory(point_cfg, seed, state_dim, action_dim)`` may supply
    pre-built models; they are then trained for ``cfg.train.epochs`` epochs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trials = cfg.trials if trials is None else trials
    parallel = cfg.parallel if parallel is None else parallel
    train_batch, test_batch = trajectory_data(cfg)
    points = [tuple(p.items()) for p in cfg.grid()]
    jobs = [(cfg, p, t, train_batch, test_batch, out) for p in points for t in range(trials)]
    if model_factory is None:
        results = _map_trials(_dynamics_job, jobs, parallel)
    else:
        results = []
        for c, p, t, tr, te, ck in jobs:
            pc = c.with_overrides(**dict(p))
            model = model_factory(pc, c.base_seed + t, tr.state_dim, tr.action_dim)
            results.append(train_dynamics_trial(pc, t, tr, te, p, ck, model=model))
    result = RunResult()
    epoch_rows = []
    for (c, p, t, _, _, _), (rows, scores, status) in zip(jobs, results):
        pc = c.with_overrides(**dict(p))
        epoch_rows.extend(rows)
        result.rows.append(_dynamics_row(cfg, pc, p, t, scores, status))
        result.failures += scores is None
    result.summary = summarize_dynamics(cfg, points, result.rows)
    result.paths["results"] = emit_csv(result.rows, out / "dynamics.csv", DYN_FIELDS)
    result.paths["summary"] = emit_csv(result.summary, out / "dynamics_summary.csv", DYN_SUMMARY_FIELDS)
    result.paths["epochs"] = emit_csv(epoch_rows, out / "dynamics_epochs.csv", DYN_EPOCH_FIELDS)
    return result


def eval_dynamics(cfg, out_dir, trials=None):
    """Score saved dynamics checkpoints on the test trajectories."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_batch, test_batch = trajectory_data(cfg)
    trials = cfg.trials if trials is None else trials
    points = [tuple(p.items()) for p in cfg.grid()]
    result = RunResult()
    for p in points:
        pc = cfg.with_overrides(**dict(p))
        for t in range(trials):
            seed = cfg.base_seed + t
            if cfg.eval.checkpoint:
                ck = cfg.resolve(cfg.eval.checkpoint)
            else:
                label = point_label(p).replace(" ", "_").replace("=", "")
                ck = out / f"dynamics_{label}_trial{t}.qvae"
            model = build_dynamics_model(pc, test_batch.state_dim, test_batch.action_dim, seed)
            try:
                model.store.load_state_dict(read_checkpoint(ck))
                scores, status = evaluate_prediction(test_batch, model), "ok"
            except (OSError, KeyError, ValueError, QvaeError) as exc:
                scores, status = None, f"failed: {exc}".replace("\n", " ")
                result.failures += 1
            result.rows.append(_dynamics_row(cfg, pc, p, t, scores, status))
    result.summary = summarize_dynamics(cfg, points, result.rows)
    result.paths["results"] = emit_csv(result.rows, out / "dynamics_eval.csv", DYN_FIELDS)
    result.paths["summary"] = emit_csv(result.summary, out / "dynamics_eval_summary.csv",
                                       DYN_SUMMARY_FIELDS)
    return result


# ---- divergence oracle ---------------------------------------------------------

DIVERGENCE_FIELDS = ["pair", "q", "dim", "closed_form", "monte_carlo", "std_error",
                     "z_score", "agree", "nonnegative"]


def random_gaussian_pair(rng, max_dim=8):
    d = int(rng.integers(1, max_dim + 1))
    p1 = qmath.DiagonalGaussian(rng.uniform(-1.0, 1.0, d), rng.uniform(-0.5, 0.5, d))
    p2 = qmath.DiagonalGaussian(rng.uniform(-1.0, 1.0, d), rng.uniform(-0.5, 0.5, d))
    return p1, p2


def divergence_rows(n_pairs, qs, n_samples, seed):
    rng = np.random.default_rng(seed)
    pairs = [random_gaussian_pair(rng) for _ in range(n_pairs)]
    rows = []
    for q in qs:
        for i, (p1, p2) in enumerate(pairs):
            closed = qmath.tsallis_kl_gauss(p1, p2, q)
            est, se = qmath.tsallis_kl_monte_carlo(p1, p2, q, n_samples, seed=[seed, i, int(q * 1000)])
            z = abs(closed - est) / se if se > 0 else (0.0 if closed == est else np.inf)
            rows.append({"pair": i, "q": q, "dim": p1.dim, "closed_form": closed,
                         "monte_carlo": est, "std_error": se, "z_score": z,
                         "agree": bool(z <= 3.0), "nonnegative": bool(closed >= 0.0)})
    return rows


def divergence_check(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ev = cfg.eval
    rows = divergence_rows(ev.divergence_pairs, ev.divergence_q, ev.divergence_samples, cfg.base_seed)
    result = RunResult(rows=rows, failures=sum(not (r["agree"] and r["nonnegative"]) for r in rows))
    result.paths["results"] = emit_csv(rows, out / "divergence_check.csv", DIVERGENCE_FIELDS)
    return result

