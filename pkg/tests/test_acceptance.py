"""Acceptance criteria 1 to 11, one printed PASS/FAIL line each.

The MNIST trend criteria share one cache of trained models: each
(objective, beta, q) point is trained once for every seed and reused by
every criterion that reads it. Runtimes are CPU seconds of the work a
criterion needs, whether or not another criterion already paid for it.
"""
import math
import time
from pathlib import Path

import numpy as np

from conftest import ACCEPTANCE_LINES
from helpers import FixedNet
from qvae import qmath
from qvae.autodiff import tensor as T
from qvae.data import generate_linear_latent_trajectories
from qvae.dynamics import rollout
from qvae.harness import gradcheck, runner
from qvae.harness.config import config_from_text
from qvae.metrics import bce, mardia_kurtosis
from qvae.vae import VAE, EncoderDecoderSpec, QvaeHyperParams, elbo_loss

ROOT = Path(__file__).resolve().parents[1]
MNIST_SEEDS = 5
MNIST_EPOCHS = 20
DYNAMICS_SEEDS = 10


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def rel_err(a, b, scale):
    return np.abs(a - b) / np.maximum(scale, np.finfo(float).tiny)


# ---- 1: Tsallis algebra ----------------------------------------------------------

def test_criterion_1_tsallis_algebra():
    t0 = time.process_time()
    rng = np.random.default_rng(11)
    n = 10_000
    x = rng.uniform(1e-3, 10.0, n)
    y = rng.uniform(1e-3, 10.0, n)
    qs = rng.uniform(0.05, 1.95, n)
    worst = {}

    lx = np.array([qmath.q_log(a, q) for a, q in zip(x, qs)])
    ly = np.array([qmath.q_log(b, q) for b, q in zip(y, qs)])
    lxy = np.array([qmath.q_log(a * b, q) for a, b, q in zip(x, y, qs)])
    cross = (1 - qs) * lx * ly
    # relative to the size of the terms being summed
    worst["pseudo_additivity"] = rel_err(lxy, lx + ly + cross, np.abs(lx) + np.abs(ly) + np.abs(cross)).max()

    prod = np.array([qmath.q_product(a, b, q) for a, b, q in zip(x, y, qs)])
    ok = prod > 0
    lp = np.array([qmath.q_log(p, q) for p, q in zip(prod[ok], qs[ok])])
    worst["q_product_additivity"] = rel_err(lp, lx[ok] + ly[ok], np.abs(lx[ok]) + np.abs(ly[ok])).max()

    z = rng.uniform(1e-3, 1e3, n)
    back = np.array([qmath.q_exp(qmath.q_log(a, q), q) for a, q in zip(z, qs)])
    worst["exp_log_identity"] = rel_err(back, z, z).max()

    cont = 0.0
    # just outside the exact unit branch, so the deformed formulas are the ones measured
    for q in (1 - 1e-11, 1 + 1e-11):
        assert not qmath.is_unit_q(q)
        cont = max(cont, rel_err(qmath.q_log(z, q), np.log(z), np.abs(np.log(z))).max())
        w = rng.uniform(-5, 5, n)
        cont = max(cont, rel_err(qmath.q_exp(w, q), np.exp(w), np.exp(w)).max())
    worst["unit_continuity"] = cont
    elapsed = time.process_time() - t0
    ok = all(v < 1e-9 for v in worst.values()) and elapsed < 10 and ok.sum() > n // 2
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert report(1, ok, f"{n} points, max rel err {detail}; {elapsed:.1f}s")


# ---- 2: divergence oracle ----------------------------------------------------------

def test_criterion_2_divergence_oracle():
    t0 = time.process_time()
    rows = runner.divergence_rows(100, (0.5, 0.8, 1.2), 1_000_000, seed=0)
    p1 = qmath.DiagonalGaussian(np.zeros(1), np.zeros(1))
    p2 = qmath.DiagonalGaussian(np.ones(1), np.zeros(1))
    hand = qmath.tsallis_kl_gauss(p1, p2, 0.5)
    elapsed = time.process_time() - t0
    z = np.array([r["z_score"] for r in rows])
    agree = sum(r["agree"] for r in rows)
    nonneg = all(r["nonnegative"] for r in rows)
    ok = agree == len(rows) and nonneg and abs(hand - 0.235041) < 1e-3 and elapsed < 300
    worst = max(rows, key=lambda r: r["z_score"])
    detail = (f"{agree}/{len(rows)} within 3 SE, max z {z.max():.2f} at pair {worst['pair']} "
              f"q={worst['q']}, rms z {np.sqrt(np.mean(z ** 2)):.2f}, "
              f"{np.mean(z > 2):.3f} above 2 SE (0.046 expected); nonnegative {nonneg}; "
              f"hand value {hand:.6f}; {elapsed:.0f}s")
    assert report(2, ok, detail)


# ---- 3: gradients ------------------------------------------------------------------

def test_criterion_3_gradients():
    t0 = time.process_time()
    results = gradcheck.run_all(seed=0)
    control = gradcheck.corrupted_vjp_check(seed=0)
    elapsed = time.process_time() - t0
    names = [r.component for r in results]
    required = set(T.PRIMITIVES) | {"layer_norm", "swish", "elbo_vae", "elbo_beta_vae", "elbo_q_vae",
                                    "elbo_q_vae_simplified", "dynamics_loss"}
    worst = max(results, key=lambda r: r.relative_error)
    ok = (required <= set(names) and len(names) == len(set(names))
          and all(r.passed for r in results) and not control.passed and elapsed < 120)
    detail = (f"{len(results)} components, worst {worst.component} {worst.relative_error:.1e}, "
              f"corrupted swish flagged at {control.relative_error:.1e}; {elapsed:.1f}s")
    assert report(3, ok, detail)


# ---- 4: mode collapse --------------------------------------------------------------

def test_criterion_4_mode_collapse(tmp_path):
    t0 = time.process_time()
    spec = EncoderDecoderSpec(12, (16, 16), (16, 16))
    rng = np.random.default_rng(4)
    batch_gap = 0.0
    for _ in range(100):
        seed = int(rng.integers(1 << 30))
        x = rng.uniform(0, 1, (8, 12))
        noise = rng.standard_normal((8, 3))
        qh = QvaeHyperParams(q=1.0, beta=1.0, latent_dim=3, objective_mode="q_vae")
        vh = QvaeHyperParams(latent_dim=3, objective_mode="vae")
        a = elbo_loss(VAE(spec, qh, seed=seed), x, qh, noise).total
        b = elbo_loss(VAE(spec, vh, seed=seed), x, vh, noise).total
        batch_gap = max(batch_gap, abs(a - b))

    def one_epoch(mode, out):
        cfg = config_from_text(f"[experiment]\nkind = mnist_train\n[model]\nobjective_mode = {mode}\n"
                               "q = 1.0\nbeta = 1.0\n[train]\nepochs = 1\n", base_dir=ROOT)
        return runner.run_training(cfg, out).rows
    q_rows, v_rows = one_epoch("q_vae", tmp_path / "q"), one_epoch("vae", tmp_path / "v")
    keys = ("loss_total", "loss_reconstruction", "loss_regularizer")
    epoch_gap = max(abs(a[k] - b[k]) for a, b in zip(q_rows, v_rows) for k in keys)
    elapsed = time.process_time() - t0
    ok = (batch_gap < 1e-8 and epoch_gap < 1e-6 and len(q_rows) == len(v_rows) == 1
          and q_rows[0]["status"] == "ok" and elapsed < 120)
    assert report(4, ok, f"batch gap {batch_gap:.1e} over 100 draws, epoch gap {epoch_gap:.1e}; "
                         f"{elapsed:.0f}s")


# ---- 5 to 8: MNIST trends ----------------------------------------------------------

_mnist_cache = {}


def _mnist_data():
    if "data" not in _mnist_cache:
        cfg = config_from_text("[experiment]\nkind = mnist_sweep\n", base_dir=ROOT)
        _mnist_cache["data"] = runner.load_mnist_pair(cfg)
    return _mnist_cache["data"]


def mnist_point(mode, beta, q):
    """Final (kurtosis, BCE) per seed and the CPU seconds spent, NaN for failed seeds."""
    key = (mode, float(beta), float(q))
    if key not in _mnist_cache:
        cfg = config_from_text(f"[experiment]\nkind = mnist_sweep\n[model]\nobjective_mode = {mode}\n"
                               f"beta = {beta}\nq = {q}\n[train]\nepochs = {MNIST_EPOCHS}\n",
                               base_dir=ROOT)
        train, test = _mnist_data()
        t0 = time.process_time()
        kurt, err = [], []
        for seed in range(MNIST_SEEDS):
            _, final = runner.train_mnist_trial(cfg, seed, train, test)
            kurt.append(final["final_kurtosis"] if final else np.nan)
            err.append(final["final_bce"] if final else np.nan)
        _mnist_cache[key] = (np.array(kurt), np.array(err), time.process_time() - t0)
        print(f"{key}: kurtosis {np.round(kurt, 2)}, bce {np.round(err, 1)}")
    return _mnist_cache[key]


def medians(point):
    k, b, _ = point
    return float(np.median(k)), float(np.median(b))


def fmt(label, point):
    k, b = medians(point)
    return f"{label} k={k:.2f} bce={b:.1f}"


def test_criterion_5_beta_trend():
    pts = [mnist_point("beta_vae", beta, 1.0) for beta in (1, 4, 8)]
    k = [medians(p)[0] for p in pts]
    b = [medians(p)[1] for p in pts]
    elapsed = sum(p[2] for p in pts)
    ok = all(np.diff(k) >= 0) and all(np.diff(b) >= 0) and elapsed < 90 * 60
    detail = "; ".join(fmt(f"beta={beta}", p) for beta, p in zip((1, 4, 8), pts))
    assert report(5, ok, f"{detail}; {elapsed / 60:.0f} min")


def test_criterion_6_q_trend():
    p06, p08, p10 = (mnist_point("q_vae", 1, q) for q in (0.6, 0.8, 1.0))
    seeds_up = int(np.sum(p08[0] > p10[0]))
    bce_ok = medians(p10)[1] <= medians(p06)[1]
    elapsed = p06[2] + p08[2] + p10[2]
    ok = bce_ok and seeds_up >= 3 and elapsed < 90 * 60
    detail = (f"{fmt('q=0.6', p06)}; {fmt('q=0.8', p08)}; {fmt('q=1.0', p10)}; "
              f"kurtosis(0.8) > kurtosis(1.0) in {seeds_up}/{MNIST_SEEDS} seeds; {elapsed / 60:.0f} min")
    assert report(6, ok, detail)


def test_criterion_7_simplified_trend():
    p05, p10 = (mnist_point("q_vae_simplified", 1, q) for q in (0.5, 1.0))
    (k05, b05), (k10, b10) = medians(p05), medians(p10)
    elapsed = p05[2] + p10[2]
    ok = k05 > k10 and b05 > b10 and elapsed < 60 * 60
    assert report(7, ok, f"{fmt('q=0.5', p05)}; {fmt('q=1.0', p10)}; {elapsed / 60:.0f} min")


def test_criterion_8_comparison_soft():
    pq, pb = mnist_point("q_vae", 1, 0.8), mnist_point("beta_vae", 3, 1.0)
    (kq, bq), (kb, bb) = medians(pq), medians(pb)
    orderings = int(kq >= kb) + int(bq <= bb)
    elapsed = pq[2] + pb[2]
    # soft: one ordering of two calls for investigation, not failure
    ok = orderings >= 1 and elapsed < 60 * 60
    note = {2: "both orderings hold", 1: "1 of 2 orderings, investigate", 0: "no ordering holds"}
    assert report(8, ok, f"{fmt('(1.0, 0.8)', pq)}; {fmt('(3.0, 1.0)', pb)}; {note[orderings]}; "
                         f"{elapsed / 60:.0f} min")


# ---- 9: dynamics -------------------------------------------------------------------

def test_criterion_9_dynamics(tmp_path):
    cfg = config_from_text(
        f"[experiment]\nkind = dynamics_train\ntrials = {DYNAMICS_SEEDS}\n"
        "[model]\nnetwork = V3\nlatent_dim = 3\ngamma = 0.1\n"
        "[data]\ngenerator = pointmass\nn_train_trajectories = 150\nn_test_trajectories = 50\nsteps = 200\n"
        "[sweep]\npoints = beta=0 q=1; beta=0.01 q=1; beta=0.01 q=0.8\n")
    t0 = time.process_time()
    res = runner.run_dynamics_experiment(cfg, tmp_path)
    elapsed = time.process_time() - t0
    by_point = {s["point"]: s for s in res.summary}
    q_rows = [r for r in res.rows if r["point"] == "beta=0.01 q=0.8"]
    finite = sum(r["status"] == "ok" and r["diverged_latent"] == 0 and math.isfinite(r["t_step_latent"])
                 for r in q_rows)
    t_q = by_point["beta=0.01 q=0.8"]["median_t_step_state"]
    t_b = by_point["beta=0.01 q=1.0"]["median_t_step_state"]
    one = [s["median_one_step_state"] for s in res.summary]
    spread = max(one) / min(one)
    ok = finite == DYNAMICS_SEEDS and t_q <= t_b and spread <= 2.0 and elapsed < 2 * 3600
    for s in res.summary:
        print(s)
    detail = (f"(a) finite q-VAE rollouts {finite}/{DYNAMICS_SEEDS}; "
              f"(b) median T-step state {t_q:.4g} vs baseline {t_b:.4g}; "
              f"(c) 1-step state medians {', '.join(f'{v:.3g}' for v in one)} spread {spread:.2f}x; "
              f"latent divergence counts {[s['trials_with_latent_divergence'] for s in res.summary]}; "
              f"{elapsed / 60:.0f} min")
    assert report(9, ok, detail)


# ---- 10: metrics -------------------------------------------------------------------

def test_criterion_10_metrics():
    t0 = time.process_time()
    rng = np.random.default_rng(10)
    gauss = mardia_kurtosis(rng.standard_normal((100_000, 4)))
    heavy = mardia_kurtosis(rng.standard_t(5, size=(100_000, 4)))
    Z = rng.standard_t(7, size=(5000, 3))
    base = mardia_kurtosis(Z)
    affine = 0.0
    for _ in range(20):
        A = rng.normal(size=(3, 3))
        if abs(np.linalg.det(A)) < 1e-2:
            continue
        affine = max(affine, abs(mardia_kurtosis(Z @ A.T + rng.normal(size=3)) - base))
    ln2 = abs(bce(np.array([1.0]), np.array([0.5])) - math.log(2))
    elapsed = time.process_time() - t0
    ok = abs(gauss) <= 0.15 and heavy > 0 and affine < 1e-6 and ln2 < 1e-9 and elapsed < 60
    assert report(10, ok, f"gaussian {gauss:.3f}, t5 {heavy:.2f}, affine gap {affine:.1e}, "
                          f"ln2 gap {ln2:.1e}; {elapsed:.1f}s")


# ---- 11: known linear system -------------------------------------------------------

def test_criterion_11_known_system():
    t0 = time.process_time()
    roll = rollout(np.array([8.0]), np.zeros((3, 1)), FixedNet([0.5], [[0.0]]))
    exact = roll.latents[:, 0].tolist() == [4.0, 2.0, 1.0] and not roll.diverged[0]

    decay = np.array([0.95, 0.8])
    control = np.array([[0.1], [-0.05]])
    obs = np.array([[1.0, 0.0], [0.3, 1.0], [0.0, 0.5], [0.5, -0.5]])
    train, _ = generate_linear_latent_trajectories(100, 50, decay, control, obs, seed=1)
    test, _ = generate_linear_latent_trajectories(20, 50, decay, control, obs, seed=2)
    cfg = config_from_text("[experiment]\nkind = dynamics_train\n[model]\nlatent_dim = 2\n"
                           "q = 0.8\nbeta = 0.01\n[train]\nepochs = 20\n")
    _, scores, status = runner.train_dynamics_trial(cfg, 0, train, test)
    elapsed = time.process_time() - t0
    ratio = scores.t_step_state / scores.one_step_state if scores else np.inf
    ok = exact and status == "ok" and ratio < 10 and elapsed < 15 * 60
    assert report(11, ok, f"rollout 8 -> {roll.latents[:, 0].tolist()}, learned T-step/1-step state "
                          f"MSE {ratio:.2f} ({scores.t_step_state:.4g} / {scores.one_step_state:.4g}); "
                          f"{elapsed:.0f}s")
