import math

import numpy as np
import pytest

from uura.classes import ClassRegistry
from uura.decoder import (PenaltyConfig, decode_session, decode_subslot, grad_f,
                          initial_state, iter_decode, p1_objective, proximal_iteration,
                          soft_threshold, stitch_penalty, stitch_subgradient, top_k)
from uura.errors import ConfigError, DomainError
from uura.ml_detector import DetectionConfig, covariance, solve_p0
from uura.system import SystemConfig, sample_covariance, simulate_trial, unmap_index

from oracles import fd_gradient, gradient_descent


def _random_problem(seed, n=16, n0=8, m=4, k=3, sigma2=1.0):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((n0, n)) + 1j * rng.standard_normal((n0, n))
    c /= np.linalg.norm(c, axis=0)
    truth = np.zeros(n)
    truth[rng.choice(n, k, replace=False)] = rng.uniform(1, 10, k)
    h = (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) / math.sqrt(2)
    w = (rng.standard_normal((n0, m)) + 1j * rng.standard_normal((n0, m))) * math.sqrt(sigma2 / 2)
    y = c @ (np.sqrt(truth)[:, None] * h) + w
    return sample_covariance(y), c, truth, rng


def _state(gamma, c, sigma2=1.0, step=0.03):
    return initial_state(gamma, c, sigma2, step)


def test_gradient_at_origin():
    s, c, _, _ = _random_problem(0)
    sigma2 = 0.5
    g = grad_f(_state(np.zeros(16), c, sigma2), c, s)
    expected = 1 / sigma2 - np.real(np.einsum("ij,ik,kj->j", c.conj(), s, c)) / sigma2**2
    assert np.allclose(g, expected, rtol=1e-12, atol=1e-12)


def test_gradient_matches_finite_differences():
    for seed in range(10):
        s, c, _, rng = _random_problem(seed)
        gamma = rng.uniform(0.1, 5, 16) * (rng.random(16) < 0.5)
        g = grad_f(_state(gamma, c), c, s)
        fd = fd_gradient(gamma, s, c, 1.0)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


def test_gradient_vanishes_at_truth_for_matched_covariance():
    _, c, truth, _ = _random_problem(3)
    s = covariance(truth, c, 1.0)
    g = grad_f(_state(truth, c), c, s)
    assert np.abs(g).max() < 1e-10
    assert np.abs(fd_gradient(truth, s, c, 1.0)).max() < 1e-6


def test_gradient_refactors_on_stale_inverse():
    s, c, _, rng = _random_problem(1)
    gamma = rng.uniform(1, 3, 16)
    st = _state(gamma, c)
    st.cov_inv = np.eye(8) * 10.0  # stale: makes 1 - gamma q negative
    with pytest.raises(Exception):
        grad_f(st, c, s)
    st.cov_inv = np.eye(8) * 10.0
    g = grad_f(st, c, s, noise_variance=1.0)
    assert np.allclose(g, grad_f(_state(gamma, c), c, s), rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("a,lam,out", [(0.5, 0.2, 0.3), (0.1, 0.2, 0.0), (-0.5, 0.2, -0.3)])
def test_soft_threshold_branches(a, lam, out):
    assert soft_threshold(np.array([a]), lam)[0] == pytest.approx(out, abs=1e-15)


def test_soft_threshold_rejects_negative():
    with pytest.raises(DomainError):
        soft_threshold(np.ones(2), -1.0)


def _registry(gains, dim=4):
    reg = ClassRegistry(dim)
    for i, g in enumerate(gains):
        reg.add_class(i, g)
    return reg


def test_stitch_subgradient_examples():
    reg = _registry([1.0])
    g, assign = stitch_subgradient(np.array([math.e, 0.0]), [0], reg)
    assert g[0] == pytest.approx(1 / math.e) and g[1] == 0 and assign == {0: 0}
    g, _ = stitch_subgradient(np.array([1.0]), [0], reg)
    assert g[0] == 0.0
    reg = _registry([2.0, 8.0])
    _, assign = stitch_subgradient(np.array([7.5]), [0], reg)
    assert assign == {0: 1}


def test_stitch_subgradient_skips_unlisted_and_floor():
    reg = _registry([2.0])
    g, assign = stitch_subgradient(np.array([5.0, 0.0, 3.0]), [1, 2], reg)
    assert g[0] == 0 and g[1] == 0 and g[2] != 0 and assign == {2: 0}
    with pytest.raises(DomainError):
        stitch_subgradient(np.ones(2), [0], ClassRegistry(2))


def test_stitch_penalty_gradient_matches_subgradient():
    reg = _registry([2.0, 9.0])
    gamma = np.array([3.0, 0.0, 6.5, 0.2])
    temp = [0, 2]
    g, _ = stitch_subgradient(gamma, temp, reg)
    h = 1e-6
    for j in temp:
        e = np.zeros(4)
        e[j] = h
        fd = (stitch_penalty(gamma + e, temp, reg) - stitch_penalty(gamma - e, temp, reg)) / (2 * h)
        assert fd == pytest.approx(g[j], rel=1e-6)


def test_top_k_ties_and_order():
    assert list(top_k(np.array([1.0, 3.0, 3.0, 2.0]), 2)) == [1, 2]
    assert list(top_k(np.array([5.0, 5.0, 5.0]), 2)) == [0, 1]


def test_penalty_config_validation():
    for bad in (dict(alpha=-1), dict(step_size=0), dict(step_decay=1.5), dict(tolerance=0),
                dict(start="warm")):
        with pytest.raises(ConfigError):
            PenaltyConfig(**bad)


def test_unpenalized_iteration_is_gradient_descent():
    s, c, _, rng = _random_problem(4)
    gamma0 = rng.uniform(0, 2, 16)
    pen = PenaltyConfig(alpha=0.0, beta=0.0, step_size=0.05)
    reg = _registry([1.0])
    st = _state(gamma0, c, step=0.05)
    oracle = gradient_descent(gamma0, s, c, 1.0, 0.05, 20)
    for t in range(20):
        st = proximal_iteration(st, c, s, reg, pen, 1.0)
        assert np.abs(st.gamma - oracle[t + 1]).max() < 1e-10


def test_fixed_point_is_stationary():
    # single class centred on the ML optimum of a one-UE problem: no force acts
    _, c, _, _ = _random_problem(5, k=1)
    truth = np.zeros(16)
    truth[7] = 4.0
    s = covariance(truth, c, 1.0)
    reg = _registry([4.0])
    pen = PenaltyConfig(alpha=0.0, beta=0.05)
    st = proximal_iteration(_state(truth, c), c, s, reg, pen, 1.0)
    assert np.sum((st.gamma - truth) ** 2) / 16 < pen.tolerance
    assert np.abs(st.gamma - truth).max() < 1e-10


def test_zero_beta_keeps_error_signal():
    s, c, _, rng = _random_problem(6)
    st = _state(rng.uniform(0, 1, 16), c)
    nxt = proximal_iteration(st, c, s, _registry([1.0]), PenaltyConfig(beta=0.0), 1.0)
    assert np.all(nxt.u == st.u)


def test_proximal_iteration_leaves_input_untouched():
    s, c, _, rng = _random_problem(7)
    st = _state(rng.uniform(0, 1, 16), c)
    before = (st.gamma.copy(), st.cov.copy(), st.cov_inv.copy())
    proximal_iteration(st, c, s, _registry([1.0, 3.0]), PenaltyConfig(), 1.0)
    assert np.array_equal(st.gamma, before[0]) and np.array_equal(st.cov, before[1])
    assert np.array_equal(st.cov_inv, before[2])


def test_step_decay():
    s, c, _, _ = _random_problem(8)
    st = _state(np.zeros(16), c, step=0.03)
    nxt = proximal_iteration(st, c, s, _registry([1.0]), PenaltyConfig(step_decay=0.8), 1.0)
    assert nxt.step == pytest.approx(0.024) and nxt.t == st.t + 1


TOY = SystemConfig(total_users=8, active_users=2, antennas=16, message_bits=8, subblock_bits=4,
                   subslots=2, codeword_length=16, noise_variance=1.0, target_snr_db=20.0, seed=21)


def _collides(tr):
    cols = tr.truth.columns
    return any(len(set(cols[:, l])) < cols.shape[0] for l in range(cols.shape[1]))


def test_toy_subslot_recovery():
    ok = clean = 0
    for t in range(100):
        tr = simulate_trial(TOY, t, gains=np.array([100.0, 1600.0]))
        res = decode_session(tr.signals, tr.codebook, 1.0, threshold=10.0, subblock_bits=4)
        hit = set(res.messages) == set(tr.truth.messages)
        if _collides(tr):
            # two UEs on one codeword leave a class without its own codeword
            assert not hit
            continue
        clean += 1
        ok += hit
    assert ok >= 0.95 * clean and clean >= 80


def test_covariance_ledger_and_splitting_after_decode():
    tr = simulate_trial(TOY.replace(subslots=2), 0, gains=np.array([100.0, 1600.0]))
    s1, s2 = tr.sample_covariances()
    c = tr.codebook.matrix
    est = solve_p0(s1, c, 1.0)
    reg = ClassRegistry(16)
    for j in np.flatnonzero(est.gamma > 10):
        reg.add_class(int(j), float(est.gamma[j]))
    pen = PenaltyConfig()
    res = decode_subslot(s2, c, reg, pen, solve_p0(s2, c, 1.0), 2, 1.0, 4, keep_state=True)
    st = res.state
    direct = covariance(st.gamma, c, 1.0)
    assert np.linalg.norm(st.cov - direct) / np.linalg.norm(direct) < 1e-6
    assert np.linalg.norm(st.cov_inv - np.linalg.inv(direct)) / np.linalg.norm(np.linalg.inv(direct)) < 1e-6
    assert np.abs(st.z - st.gamma).max() < 10 * pen.tolerance
    assert all(m[-1] >= 0 for m in reg.members)


def test_single_class_takes_argmax():
    tr = simulate_trial(TOY.replace(active_users=1), 0)
    s1, s2 = tr.sample_covariances()
    c = tr.codebook.matrix
    reg = ClassRegistry(16)
    reg.add_class(0, 50.0)
    res = decode_subslot(s2, c, reg, PenaltyConfig(), solve_p0(s2, c, 1.0), 2, 1.0, 4)
    j = int(np.argmax(res.gamma_hat))
    assert res.assignments == {j: 0}
    assert np.array_equal(res.fragments[0], unmap_index(j + 1, 4))


def test_decode_subslot_rejects_bad_input():
    c = np.eye(4, dtype=complex)
    with pytest.raises(DomainError):
        decode_subslot(np.eye(4), c, ClassRegistry(2), PenaltyConfig(), np.zeros(4), 2, 1.0, 2)
    with pytest.raises(DomainError):
        decode_subslot(np.eye(4), c, _registry([1.0]), PenaltyConfig(), np.zeros(4), 1, 1.0, 2)


def test_single_subslot_session():
    cfg = TOY.replace(subslots=1, message_bits=4)
    tr = simulate_trial(cfg, 0, gains=np.array([100.0, 1600.0]))
    res = decode_session(tr.signals, tr.codebook, 1.0, threshold=10.0, subblock_bits=4)
    assert res.k_hat == 2 and len(res.messages) == 2
    assert all(m.bits.size == 4 for m in res.messages)
    assert set(res.messages) == set(tr.truth.messages)


def test_empty_first_subslot_gives_warning():
    cfg = TOY
    tr = simulate_trial(cfg, 0)
    res = decode_session(tr.signals, tr.codebook, 1.0, threshold=1e9, subblock_bits=4)
    assert res.messages == [] and res.k_hat == 0 and res.warnings


def test_session_is_deterministic():
    cfg = SystemConfig(total_users=100, active_users=6, antennas=16, message_bits=18, subblock_bits=6,
                       subslots=3, codeword_length=24, seed=3)
    tr = simulate_trial(cfg, 0)
    runs = [decode_session(tr.signals, tr.codebook, 1.0, threshold=1.0, subblock_bits=6) for _ in range(2)]
    assert [m.bits.tobytes() for m in runs[0].messages] == [m.bits.tobytes() for m in runs[1].messages]
    assert all(np.array_equal(a.gamma_hat, b.gamma_hat) for a, b in zip(runs[0].subslots, runs[1].subslots))


def test_fragments_emitted_before_next_signal_is_read():
    tr = simulate_trial(TOY.replace(subslots=2), 1, gains=np.array([100.0, 1600.0]))
    consumed = []

    def feed():
        for l, y in enumerate(tr.signals, start=1):
            consumed.append(l)
            yield y

    for res, _ in iter_decode(feed(), tr.codebook, 1.0, PenaltyConfig(), DetectionConfig(),
                              threshold=10.0, subblock_bits=4):
        assert consumed[-1] == res.subslot
        assert len(res.fragments) == 2


def test_zero_start_begins_at_noise_covariance():
    s, c, _, _ = _random_problem(9)
    reg = _registry([2.0, 5.0, 8.0])
    res = decode_subslot(s, c, reg, PenaltyConfig(start="zero"), None, 2, 1.0, 4,
                         truth=np.zeros(16), objective=True)
    assert res.truth_mse_trace[0] == 0.0
    assert len(res.objective_trace) == res.iterations + 1


def test_p1_objective_components():
    s, c, _, rng = _random_problem(10)
    gamma = rng.uniform(0, 2, 16)
    reg = _registry([1.0, 2.0])
    pen = PenaltyConfig(alpha=0.3, beta=0.7)
    psi = covariance(gamma, c, 1.0)
    f = np.linalg.slogdet(psi)[1] + np.trace(np.linalg.solve(psi, s)).real
    expected = f + 0.3 * gamma.sum() + 0.7 * stitch_penalty(gamma, top_k(gamma, 2), reg)
    assert p1_objective(gamma, s, c, 1.0, reg, pen) == pytest.approx(expected, rel=1e-12)
