import gzip
import struct

import numpy as np
import pytest

from qvae.data import (
    TrajectoryBatch, cpg_rates, generate_cpg_trajectories, generate_linear_latent_trajectories,
    generate_pointmass_trajectories, load_mnist_idx, pointmass_step, read_trajectory_file,
    split_dataset, tripod_offsets, write_mnist_idx, write_trajectory_csv, write_trajectory_file,
)
from qvae.errors import DimensionError, DomainError, FormatError


# ---- MNIST IDX -------------------------------------------------------------------

def tiny_images(n=5):
    rng = np.random.default_rng(0)
    return rng.integers(0, 256, (n, 4), dtype=np.uint8), rng.integers(0, 10, n)


@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_idx_round_trip(tmp_path, suffix):
    imgs, labels = tiny_images()
    ip, lp = tmp_path / f"i{suffix}", tmp_path / f"l{suffix}"
    write_mnist_idx(imgs, labels, ip, lp, shape=(2, 2))
    ds = load_mnist_idx(ip, lp)
    np.testing.assert_array_equal(ds.images, imgs / 255.0)
    np.testing.assert_array_equal(ds.labels, labels)
    assert ds.images.min() >= 0 and ds.images.max() <= 1


def test_idx_magic(tmp_path):
    imgs, labels = tiny_images()
    ip, lp = tmp_path / "i", tmp_path / "l"
    write_mnist_idx(imgs, labels, ip, lp, shape=(2, 2))
    raw = ip.read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x03"
    bad = tmp_path / "bad"
    # same payload under a 2-D magic
    bad.write_bytes(b"\x00\x00\x08\x02" + struct.pack(">II", 5, 4) + raw[16:])
    with pytest.raises(FormatError):
        load_mnist_idx(bad, lp)


def test_idx_count_mismatch(tmp_path):
    imgs, labels = tiny_images()
    write_mnist_idx(imgs, labels, tmp_path / "i", tmp_path / "l", shape=(2, 2))
    write_mnist_idx(imgs[:3], labels[:3], tmp_path / "i3", tmp_path / "l3", shape=(2, 2))
    with pytest.raises(DimensionError):
        load_mnist_idx(tmp_path / "i", tmp_path / "l3")


def test_idx_truncated(tmp_path):
    imgs, labels = tiny_images()
    write_mnist_idx(imgs, labels, tmp_path / "i", tmp_path / "l", shape=(2, 2))
    (tmp_path / "t").write_bytes((tmp_path / "i").read_bytes()[:-1])
    with pytest.raises(FormatError):
        load_mnist_idx(tmp_path / "t", tmp_path / "l")


def test_bundled_mnist_subset():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "data" / "mnist"
    train = load_mnist_idx(root / "train-images-idx3-ubyte.gz", root / "train-labels-idx1-ubyte.gz")
    test = load_mnist_idx(root / "test-images-idx3-ubyte.gz", root / "test-labels-idx1-ubyte.gz")
    assert train.images.shape == (8000, 784)
    assert test.images.shape == (2000, 784)
    assert np.bincount(test.labels).tolist() == [200] * 10
    with gzip.open(root / "train-images-idx3-ubyte.gz") as fh:
        assert fh.read(4) == b"\x00\x00\x08\x03"


# ---- trajectories ----------------------------------------------------------------

def small_batch():
    rng = np.random.default_rng(1)
    return TrajectoryBatch([rng.normal(size=(6, 3)), rng.normal(size=(3, 3))],
                           [rng.normal(size=(5, 2)), rng.normal(size=(2, 2))])


def test_batch_validation():
    with pytest.raises(DimensionError):
        TrajectoryBatch([np.zeros((3, 2))], [np.zeros((3, 1))])
    with pytest.raises(DomainError):
        TrajectoryBatch([np.full((3, 2), np.inf)], [np.zeros((2, 1))])
    b = small_batch()
    assert b.lengths == [5, 2]
    x, u, xn = b.tuples()
    assert x.shape == (7, 3) and u.shape == (7, 2)
    np.testing.assert_array_equal(xn[0], b.states[0][1])


def test_trajectory_file_round_trip(tmp_path):
    b = small_batch()
    path = tmp_path / "t.traj"
    write_trajectory_file(path, b)
    back = read_trajectory_file(path)
    for s, t in zip(b.states + b.actions, back.states + back.actions):
        np.testing.assert_array_equal(s, t)
    raw = path.read_bytes()
    (tmp_path / "cut").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        read_trajectory_file(tmp_path / "cut")
    # header claims a larger state dimension than the payload holds
    wrong = raw[:8] + struct.pack("<I", 4) + raw[12:]
    (tmp_path / "dims").write_bytes(wrong)
    with pytest.raises(FormatError):
        read_trajectory_file(tmp_path / "dims")
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        read_trajectory_file(tmp_path / "magic")


def test_trajectory_csv(tmp_path):
    write_trajectory_csv(tmp_path / "t.csv", small_batch())
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "trajectory,step,x0,x1,x2,u0,u1"
    assert len(lines) == 1 + 6 + 3


def test_split_examples():
    items = list(range(150))
    tr, va = split_dataset(items, 0.8, seed=3)
    assert (len(tr), len(va)) == (120, 30)
    assert split_dataset(items, 0.8, seed=3) == (tr, va)
    assert sorted(tr + va) == items
    with pytest.raises(DomainError):
        split_dataset([], 0.8, 0)


# ---- generators ------------------------------------------------------------------

def test_cpg_decoupled_linear_phase():
    omega, dt, steps = 2 * np.pi, 0.02, 100
    b, ph = generate_cpg_trajectories(4, 2, steps, dt=dt, k=0.0, omega=omega, coupling=0.0,
                                      action_scale=0.0, return_phases=True)
    for p in ph:
        np.testing.assert_allclose(p - p[0], np.outer(np.arange(steps + 1) * dt * omega, np.ones(4)),
                                   atol=1e-10)
    for s in b.states:
        np.testing.assert_allclose(s[:, :4] ** 2 + s[:, 4:] ** 2, 1.0, atol=1e-12)


def _pattern_error(xi):
    d = xi[None, :] - xi[:, None] - tripod_offsets(len(xi))
    return np.max(np.abs(np.angle(np.exp(1j * d))))


def test_cpg_phase_locking():
    _, ph = generate_cpg_trajectories(6, 10, 500, action_scale=0.0, k=0.0, return_phases=True)
    assert all(_pattern_error(p[-1]) < 1e-2 for p in ph)
    # with slowdown and control disturbances the gait stays near the pattern
    _, ph = generate_cpg_trajectories(6, 10, 500, return_phases=True)
    assert all(_pattern_error(p[-1]) < 0.6 for p in ph)
    assert np.mean([_pattern_error(p[0]) for p in ph]) > 2.0


def test_cpg_rates_zero_coupling():
    xi = np.array([0.1, 2.0, 4.0])
    r = cpg_rates(xi, np.zeros(3), np.zeros(3), 1.0, 3.0, 0.0, tripod_offsets(3))
    np.testing.assert_array_equal(r, 3.0)


def test_pointmass_ballistic():
    dt = 0.05
    s0 = np.array([0.5, 10.0, 0.3, 1.0, 0.2, 0.0, 1.0])
    s = s0.copy()
    for t in range(1, 41):
        s = pointmass_step(s, np.zeros(3), dt)
        # Euler recurrence closed form under constant acceleration -1
        vy = s0[3] - t * dt
        y = s0[1] + t * dt * s0[3] - dt * dt * t * (t - 1) / 2
        assert s[3] == pytest.approx(vy, abs=1e-9)
        assert s[1] == pytest.approx(y, abs=1e-9)
        assert s[0] == pytest.approx(s0[0] + t * dt * s0[2], abs=1e-9)


def test_pointmass_zero_thrust_limit():
    b = generate_pointmass_trajectories(3, 50, thrust_limit=0.0)
    assert all(np.all(a == 0.0) for a in b.actions)


def test_pointmass_policy_lands():
    b = generate_pointmass_trajectories(100, 200)
    speed = np.array([np.hypot(*s[-1, 2:4]) for s in b.states])
    assert np.mean(speed < 0.15) >= 0.9
    assert b.state_dim == 8 and b.action_dim == 3


def test_generators_deterministic_and_finite():
    a = generate_pointmass_trajectories(3, 40, noise_std=0.1, seed=5)
    b = generate_pointmass_trajectories(3, 40, noise_std=0.1, seed=5)
    for s, t in zip(a.states, b.states):
        assert s.tobytes() == t.tobytes()
    c = generate_cpg_trajectories(3, 2, 40, noise_std=0.5, seed=2)
    d = generate_cpg_trajectories(3, 2, 40, noise_std=0.5, seed=2)
    assert c.states[1].tobytes() == d.states[1].tobytes()
    for batch in (a, c):
        assert all(np.all(np.isfinite(s)) for s in batch.states)


def test_linear_latent_generator():
    decay, control = np.array([0.5]), np.array([[0.0]])
    b, z = generate_linear_latent_trajectories(1, 3, decay, control, np.array([[2.0]]), seed=0)
    z0 = z[0][0, 0]
    np.testing.assert_allclose(z[0][:, 0], z0 * np.array([1, 0.5, 0.25, 0.125]), rtol=1e-15)
    np.testing.assert_allclose(b.states[0][:, 0], 2 * z[0][:, 0], rtol=1e-15)
