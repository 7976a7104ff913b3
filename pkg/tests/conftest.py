import numpy as np
import pytest


def random_hpd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(0, np.log(cond), n))
    return (q * w) @ q.conj().T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
