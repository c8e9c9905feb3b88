"""Shared helpers for the test suite."""
import numpy as np
import pytest

import bridgesim as bs


def rand_orthonormal(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    """Random (m, n) matrix with orthonormal rows, m <= n."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q[:m, :]


def rand_spd(rng: np.random.Generator, n: int, cond: float) -> np.ndarray:
    """Random SPD matrix with condition number at most ``cond``."""
    if n == 1:
        lam = np.array([np.exp(rng.uniform(-1.0, 1.0))])
    else:
        lam = np.exp(np.linspace(0.0, np.log(cond), n))
        lam = lam / lam[rng.integers(n)]
        rng.shuffle(lam)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * lam) @ q.T


def single_full_obs(time: float, value, dim: int,
                    window=None) -> bs.ObservationSet:
    """Validated set with one identity observation of the whole state."""
    value = np.atleast_1d(np.asarray(value, dtype=float))
    ob = bs.Observation(time=time, matrix=np.eye(dim), value=value,
                        window=window)
    return bs.validate(bs.ObservationSet((ob,)), dim=dim)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
