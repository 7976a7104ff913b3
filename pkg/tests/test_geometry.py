import math

import numpy as np
import pytest

from uura.errors import DomainError
from uura.mig import (LogCenter, ScaledIdentity, center_from_log_gains, check_hpd,
                      geometric_center, log_euclidean_distance, matrix_exp, matrix_log,
                      update_center)

from conftest import random_hpd
from oracles import exp_series, grid_center, log_series


def test_log_of_identity_is_zero():
    assert np.allclose(matrix_log(np.eye(3)), 0.0, atol=1e-14)


def test_log_of_scaled_identity():
    assert np.allclose(matrix_log(math.e**2 * np.eye(4)), 2 * np.eye(4), atol=1e-13)
    assert np.allclose(matrix_log(ScaledIdentity(4, math.e**2)), 2 * np.eye(4))


def test_log_exp_round_trip(rng):
    for _ in range(20):
        a = random_hpd(rng, 3)
        err = np.linalg.norm(matrix_exp(matrix_log(a)) - a) / np.linalg.norm(a)
        assert err < 1e-10


def test_log_matches_power_series_near_identity(rng):
    for _ in range(10):
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
        a = (q * rng.uniform(0.3, 1.7, 4)) @ q.conj().T
        assert np.linalg.norm(matrix_log(a) - log_series(a)) < 1e-10


def test_exp_matches_power_series(rng):
    h = random_hpd(rng, 3, cond=3.0) - 1.5 * np.eye(3)
    assert np.linalg.norm(matrix_exp(h) - exp_series(h)) < 1e-10


@pytest.mark.parametrize("bad", [
    np.array([[1.0, 2.0], [0.0, 1.0]]),
    np.diag([1.0, -1.0]),
    np.diag([1.0, 0.0]),
])
def test_invalid_matrices_rejected(bad):
    with pytest.raises(DomainError):
        matrix_log(bad)


def test_error_names_eigenvalue():
    with pytest.raises(DomainError, match="-2"):
        check_hpd(np.diag([3.0, -2.0]))


def test_distance_examples():
    assert log_euclidean_distance(ScaledIdentity(4, 2), ScaledIdentity(4, 2)) == 0.0
    assert log_euclidean_distance(ScaledIdentity(4, 1), ScaledIdentity(4, math.e)) == pytest.approx(2.0, abs=1e-15)


def test_distance_dimension_mismatch():
    with pytest.raises(DomainError):
        log_euclidean_distance(ScaledIdentity(3, 1), ScaledIdentity(4, 1))
    with pytest.raises(DomainError):
        log_euclidean_distance(np.eye(3), np.eye(2))


def test_fast_path_equals_dense(rng):
    for _ in range(50):
        m = int(rng.integers(1, 9))
        a, b = (ScaledIdentity(m, float(g)) for g in np.exp(rng.uniform(-5, 5, 2)))
        dense = log_euclidean_distance(a.dense(), b.dense())
        assert abs(log_euclidean_distance(a, b) - dense) < 1e-12


def test_mixed_inputs_use_dense_path(rng):
    a = random_hpd(rng, 3)
    b = ScaledIdentity(3, 2.0)
    assert log_euclidean_distance(a, b) == pytest.approx(log_euclidean_distance(a, b.dense()), abs=1e-12)


def test_geometric_center_examples():
    c = geometric_center([ScaledIdentity(2, math.e**2), ScaledIdentity(2, math.e**4)])
    assert c.gain == pytest.approx(math.e**3, rel=1e-14)
    assert geometric_center([ScaledIdentity(3, 5.0)]).gain == pytest.approx(5.0, rel=1e-15)


def test_geometric_center_matches_grid_search():
    gains = [2.0, 8.0, 32.0]
    oracle = grid_center(gains)
    c = geometric_center([ScaledIdentity(2, g) for g in gains])
    assert c.gain == pytest.approx(8.0, rel=1e-12)
    assert c.gain == pytest.approx(oracle, rel=1e-4)


def test_geometric_center_dense_matches_scalar():
    members = [ScaledIdentity(3, g) for g in (2.0, 8.0, 32.0)]
    dense = geometric_center([m.dense() for m in members])
    assert np.allclose(dense, 8.0 * np.eye(3), atol=1e-12)


def test_geometric_center_errors():
    with pytest.raises(DomainError):
        geometric_center([])
    with pytest.raises(DomainError):
        geometric_center([ScaledIdentity(2, 1.0), ScaledIdentity(3, 1.0)])


def test_update_center_examples():
    c = update_center(LogCenter(4, 0.0, 1), ScaledIdentity(4, math.e**2))
    assert c.log_gain == pytest.approx(1.0, abs=1e-15) and c.count == 2
    c = update_center(LogCenter(4, math.log(4), 3), ScaledIdentity(4, 4.0))
    assert c.log_gain == pytest.approx(math.log(4), abs=1e-15) and c.count == 4


def test_streaming_equals_batch():
    c = LogCenter.from_member(ScaledIdentity(2, 2.0))
    c = update_center(c, ScaledIdentity(2, 8.0))
    batch = geometric_center([ScaledIdentity(2, 2.0), ScaledIdentity(2, 8.0)])
    assert abs(c.log_gain - batch.log_gain) < 1e-14
    assert center_from_log_gains(2, [math.log(2), math.log(8)]).log_gain == pytest.approx(c.log_gain, abs=1e-15)


def test_update_center_dimension_mismatch():
    with pytest.raises(DomainError):
        update_center(LogCenter(2, 0.0), ScaledIdentity(3, 1.0))


def test_scaled_identity_validation():
    for bad in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(DomainError):
            ScaledIdentity(2, bad)
    with pytest.raises(DomainError):
        ScaledIdentity(0, 1.0)
