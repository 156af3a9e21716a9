import numpy as np
import pytest

from survnetmix.types import Dataset


def random_spd(rng, p, jitter=0.5):
    """Random symmetric positive-definite matrix with unit-scale diagonal."""
    A = rng.normal(size=(p, p)) * jitter
    M = A @ A.T / p + np.eye(p)
    return 0.5 * (M + M.T)


def toy_dataset(rng, n=40, p=3, censor_frac=0.3, slope=None):
    """Small AFT dataset with a known linear signal and random censoring."""
    X = rng.normal(size=(n, p))
    slope = np.zeros(p) if slope is None else np.asarray(slope, dtype=float)
    z = 0.5 + X @ slope + rng.normal(0, 0.7, size=n)
    c = np.quantile(z, 1 - censor_frac) + rng.normal(0, 0.3, size=n)
    t = np.minimum(z, c)
    delta = (z <= c).astype(float)
    return Dataset.from_arrays(t, delta, X)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
