import math

import numpy as np
import pytest

from qvae.errors import DimensionError, DomainError
from qvae.metrics import bce, mardia_kurtosis, mse


def test_gaussian_kurtosis_near_zero():
    Z = np.random.default_rng(0).standard_normal((100_000, 4))
    assert abs(mardia_kurtosis(Z)) <= 0.15


def test_hand_case_population_convention():
    Z = np.array([-1.0, 1.0, -1.0, 1.0])
    n = len(Z)
    # sample covariance 4/3: squared distances (3/4)^2, so 9/16 - 3
    k = mardia_kurtosis(Z, ridge=0.0)
    assert k == pytest.approx(9 / 16 - 3, abs=1e-12)
    # the population-covariance statistic is -2
    assert (k + 3) * (n / (n - 1)) ** 2 - 3 == pytest.approx(-2.0, abs=1e-12)


def test_heavy_tails_positive():
    Z = np.random.default_rng(1).standard_t(5, size=(100_000, 2))
    assert mardia_kurtosis(Z) > 0


def test_affine_invariance():
    rng = np.random.default_rng(2)
    Z = rng.standard_t(7, size=(5000, 3))
    A = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    b = rng.normal(size=3)
    assert abs(mardia_kurtosis(Z @ A.T + b) - mardia_kurtosis(Z)) < 1e-6
    for _ in range(20):
        A = rng.normal(size=(3, 3))
        if abs(np.linalg.det(A)) < 1e-2:
            continue
        assert abs(mardia_kurtosis(Z @ A.T + b) - mardia_kurtosis(Z)) < 1e-6


def test_kurtosis_errors():
    with pytest.raises(DimensionError):
        mardia_kurtosis(np.zeros((3, 2)))
    with pytest.raises(DomainError):
        mardia_kurtosis(np.full((10, 2), np.nan))
    with pytest.raises(DomainError):
        mardia_kurtosis(np.ones((10, 2)))
    # a collapsed latent axis keeps the metric defined through the ridge
    Z = np.random.default_rng(3).normal(size=(100, 2))
    Z[:, 1] = 0.0
    assert math.isfinite(mardia_kurtosis(Z))


def test_bce_examples():
    assert bce(np.ones(4), np.ones(4)) == pytest.approx(0.0, abs=1e-6)
    assert bce(np.array([1.0]), np.array([0.5])) == pytest.approx(math.log(2), abs=1e-9)
    x = (np.random.default_rng(4).uniform(size=(3, 20)) > 0.5).astype(float)
    per_pixel = -math.log(1e-7)
    assert bce(x, 1 - x) == pytest.approx(20 * per_pixel, rel=1e-6)


def test_bce_batch_mean_of_sums():
    x = np.array([[1.0, 0.0], [1.0, 1.0]])
    p = np.array([[0.5, 0.5], [0.5, 0.25]])
    expect = 0.5 * (2 * math.log(2) + math.log(2) + math.log(4))
    assert bce(x, p) == pytest.approx(expect, abs=1e-12)


def test_bce_minimized_at_target():
    rng = np.random.default_rng(5)
    x = (rng.uniform(size=(10, 30)) > 0.5).astype(float)
    target = bce(x, np.clip(x, 1e-7, 1 - 1e-7))
    for _ in range(20):
        assert bce(x, rng.uniform(size=x.shape)) >= target


def test_mse_examples():
    a = np.random.default_rng(6).normal(size=(5, 3))
    b = np.random.default_rng(7).normal(size=(5, 3))
    assert mse(a, a) == 0.0
    assert mse(np.zeros(2), np.ones(2)) == 1.0
    assert mse(2 * a, 2 * b) == pytest.approx(4 * mse(a, b), rel=1e-14)
    with pytest.raises(DimensionError):
        mse(np.zeros(2), np.zeros(3))
