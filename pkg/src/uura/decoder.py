"""Integrated per-sub-slot codeword detection and stitching.

Sub-slot 1 is decoded by plain ML detection; its thresholded support fixes
the number of classes. Each later sub-slot solves::

    min_{gamma >= 0}  f(gamma) + alpha * ||gamma||_1 + beta * phi(gamma)

by proximal gradient with a Douglas-Rachford split of the two penalties,
where ``phi`` pulls each of the ``K`` largest entries toward the log-gain of
its geodesically nearest class center. Detected codewords are assigned to
classes and their message fragments emitted before the next sub-slot's
signal is read.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .classes import ClassRegistry, match_unique, nearest_class
from .errors import ConfigError, DomainError, NumericalError
from .ml_detector import (DetectionConfig, MlEstimate, covariance, estimate_active_count,
                          init_classes, solve_p0)
from .system import Message, sample_covariance, unmap_index

__all__ = [
    "PenaltyConfig",
    "DecoderState",
    "SubSlotDecodeResult",
    "SessionResult",
    "grad_f",
    "soft_threshold",
    "stitch_subgradient",
    "stitch_penalty",
    "p1_objective",
    "initial_state",
    "proximal_iteration",
    "top_k",
    "decode_subslot",
    "iter_decode",
    "decode_session",
]

log = logging.getLogger(__name__)

DELTA_FLOOR = 1e-14
SM_DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty weights and iteration control for sub-slots ``l >= 2``.

    ``alpha`` weights the l1 sparsity penalty and ``beta`` the stitching
    penalty. ``step_decay`` multiplies the step size after every iteration
    (1.0 keeps it fixed). Iterations stop once
    ``||gamma^{t+1} - gamma^t||^2 / 2**J < tolerance`` or after
    ``max_iterations``.

    ``start`` selects the first iterate: ``"ml"`` starts from the sub-slot's
    ML estimate, ``"zero"`` from the all-zero vector (with ``Psi = sigma^2 I``).
    """

    alpha: float = 0.1
    beta: float = 0.05
    step_size: float = 0.03
    step_decay: float = 1.0
    max_iterations: int = 100
    tolerance: float = 1e-5
    gamma_floor: float = 1e-12
    refactor_every: int = 50
    start: str = "ml"

    def __post_init__(self):
        if self.start not in ("ml", "zero"):
            raise ConfigError(f"start must be 'ml' or 'zero', got {self.start!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be nonnegative")
        if not self.step_size > 0:
            raise ConfigError("step_size must be positive")
        if not 0 < self.step_decay <= 1:
            raise ConfigError("step_decay must lie in (0, 1]")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be nonnegative")
        if not self.tolerance > 0 or not self.gamma_floor > 0:
            raise ConfigError("tolerance and gamma_floor must be positive")


@dataclass
class DecoderState:
    gamma: np.ndarray
    cov: np.ndarray
    cov_inv: np.ndarray
    z: np.ndarray
    u: np.ndarray
    t: int
    step: float


@dataclass
class SubSlotDecodeResult:
    subslot: int
    gamma_hat: np.ndarray
    active: np.ndarray
    assignments: dict[int, int]
    fragments: dict[int, np.ndarray]
    mse_trace: list[float]
    iterations: int
    conflicts: int = 0
    objective_trace: list[float] = field(default_factory=list)
    truth_mse_trace: list[float] = field(default_factory=list)
    state: DecoderState | None = None


@dataclass
class SessionResult:
    messages: list[Message]
    subslots: list[SubSlotDecodeResult]
    k_hat: int
    first_active: np.ndarray
    warnings: list[str] = field(default_factory=list)

    @property
    def iterations(self) -> list[int]:
        return [r.iterations for r in self.subslots[1:]]


def _matrix(codebook) -> np.ndarray:
    return getattr(codebook, "matrix", codebook)


def _refactor_state(gamma, c, noise_variance):
    cov = covariance(gamma, c, noise_variance)
    inv = np.linalg.inv(cov)
    return cov, 0.5 * (inv + inv.conj().T)


def grad_f(state: DecoderState, codebook, sample_cov: np.ndarray, *,
           noise_variance: float | None = None) -> np.ndarray:
    """Gradient of the ML objective at ``state.gamma``.

    Entry ``j`` is evaluated in its leave-one-out form: with ``Psi_j`` the
    covariance with codeword ``j`` removed (a Sherman-Morrison downdate of
    ``state.cov_inv``), ``qt = c_j^H Psi_j^{-1} c_j`` and
    ``pt = c_j^H Psi_j^{-1} S Psi_j^{-1} c_j``::

        df/dgamma_j = qt / (1 + gamma_j qt) - pt / (1 + gamma_j qt)**2

    All entries are computed at once from ``B = Psi^{-1} C``: the downdate
    gives ``Psi_j^{-1} c_j = b_j / (1 - gamma_j q_j)``.

    If a downdate denominator ``1 - gamma_j q_j`` is not above ``1e-12``, the
    inverse is re-factorized once (requires ``noise_variance``) and the
    evaluation retried.
    """
    c = _matrix(codebook)
    gamma = state.gamma
    for attempt in range(2):
        b = state.cov_inv @ c
        q = np.real(np.sum(c.conj() * b, axis=0))
        p = np.real(np.sum(b.conj() * (sample_cov @ b), axis=0))
        down = 1.0 - gamma * q
        if np.all(down > SM_DENOM_FLOOR):
            break
        if attempt == 1 or noise_variance is None:
            raise NumericalError("Sherman-Morrison downdate denominator collapsed")
        state.cov, state.cov_inv = _refactor_state(gamma, c, noise_variance)
    qt = q / down
    pt = p / down**2
    one = 1.0 + gamma * qt
    return qt / one - pt / one**2


def soft_threshold(a, lam: float) -> np.ndarray:
    """Elementwise shrinkage ``sign(a) * max(|a| - lam, 0)``."""
    if lam < 0:
        raise DomainError("threshold must be nonnegative")
    a = np.asarray(a, dtype=float)
    return np.where(a > lam, a - lam, np.where(a < -lam, a + lam, 0.0))


def top_k(gamma: np.ndarray, k: int) -> np.ndarray:
    """Columns of the ``k`` largest entries, ties to the lower index; sorted ascending."""
    order = np.argsort(-np.asarray(gamma), kind="stable")[:k]
    return np.sort(order)


def stitch_subgradient(gamma: np.ndarray, temp_list, registry: ClassRegistry,
                       floor: float = 1e-12) -> tuple[np.ndarray, dict[int, int]]:
    """Stitching-penalty subgradient and the temporary class of each listed codeword.

    For ``j`` in ``temp_list`` with ``gamma_j > floor`` the nearest class ``k``
    minimizes ``|r_k - ln gamma_j|`` and the entry is
    ``(ln gamma_j - r_k) / gamma_j``. Everything else is zero.
    """
    if len(registry) == 0:
        raise DomainError("class registry is empty")
    grad = np.zeros_like(gamma, dtype=float)
    idx = np.asarray(temp_list, dtype=np.int64)
    idx = idx[gamma[idx] > floor]
    if idx.size == 0:
        return grad, {}
    lg = np.log(gamma[idx])
    centers = registry.log_gains
    k = nearest_class(lg, centers)
    grad[idx] = (lg - centers[k]) / gamma[idx]
    return grad, {int(j): int(kk) for j, kk in zip(idx, k)}


def stitch_penalty(gamma: np.ndarray, temp_list, registry: ClassRegistry, floor: float = 1e-12) -> float:
    """``0.5 * sum_j min_k (ln gamma_j - r_k)**2`` over listed entries above ``floor``.

    This is the penalty whose gradient :func:`stitch_subgradient` returns.
    """
    idx = np.asarray(temp_list, dtype=np.int64)
    idx = idx[gamma[idx] > floor]
    if idx.size == 0:
        return 0.0
    d = np.abs(np.log(gamma[idx])[:, None] - registry.log_gains[None, :]).min(axis=1)
    return 0.5 * float(np.sum(d**2))


def p1_objective(gamma: np.ndarray, sample_cov: np.ndarray, codebook, noise_variance: float,
                 registry: ClassRegistry, penalties: PenaltyConfig) -> float:
    """``f + alpha ||gamma||_1 + beta phi`` with ``phi`` from :func:`stitch_penalty`."""
    psi = covariance(gamma, codebook, noise_variance)
    _, logdet = np.linalg.slogdet(psi)
    f = float(logdet + np.trace(np.linalg.solve(psi, sample_cov)).real)
    temp = top_k(gamma, len(registry))
    return (f + penalties.alpha * float(np.abs(gamma).sum())
            + penalties.beta * stitch_penalty(gamma, temp, registry, penalties.gamma_floor))


def initial_state(gamma0: np.ndarray, codebook, noise_variance: float, step: float) -> DecoderState:
    gamma = np.maximum(np.asarray(gamma0, dtype=float), 0.0).copy()
    cov, inv = _refactor_state(gamma, _matrix(codebook), noise_variance)
    return DecoderState(gamma, cov, inv, gamma.copy(), np.zeros_like(gamma), 1, float(step))


def proximal_iteration(state: DecoderState, codebook, sample_cov: np.ndarray,
                       registry: ClassRegistry, penalties: PenaltyConfig,
                       noise_variance: float) -> DecoderState:
    """One splitting pass; returns a new state and leaves ``state`` untouched.

    1. ``temp`` = the ``K`` largest entries of ``gamma`` (``K`` = number of classes)
    2. ``a = gamma - eta grad_f - eta beta u``
    3. ``z = max(soft_threshold(a, alpha eta), 0)``, the l1 prox on ``gamma >= 0``
    4. ``b = z + eta beta u``
    5. ``gamma' = max(b - beta eta * stitch_subgradient(gamma), 0)``
    6. rank-1 updates of ``Psi`` and ``Psi^{-1}`` for every changed entry
    7. ``u' = u + (z - gamma') / (eta beta)`` (skipped when ``beta == 0``)
    8. ``eta' = step_decay * eta``
    """
    c = _matrix(codebook)
    eta, alpha, beta = state.step, penalties.alpha, penalties.beta
    work = DecoderState(state.gamma, state.cov.copy(), state.cov_inv.copy(),
                        state.z, state.u, state.t, eta)
    g = grad_f(work, c, sample_cov, noise_variance=noise_variance)
    gamma = work.gamma
    temp = top_k(gamma, len(registry)) if len(registry) else np.zeros(0, dtype=np.int64)
    a = gamma - eta * g - eta * beta * state.u
    z = np.maximum(soft_threshold(a, alpha * eta), 0.0)
    b = z + eta * beta * state.u
    if beta > 0 and len(registry):
        s, _ = stitch_subgradient(gamma, temp, registry, penalties.gamma_floor)
        new = b - beta * eta * s
    else:
        new = b
    new = np.maximum(new, 0.0)

    cov, inv = work.cov, work.cov_inv
    changed = np.flatnonzero(np.abs(new - gamma) > DELTA_FLOOR)
    t_next = state.t + 1
    if penalties.refactor_every and t_next % penalties.refactor_every == 0:
        cov, inv = _refactor_state(new, c, noise_variance)
    else:
        for j in changed:
            d = new[j] - gamma[j]
            cj = c[:, j]
            bj = inv @ cj
            denom = 1.0 + d * float(np.real(np.vdot(cj, bj)))
            if denom < SM_DENOM_FLOOR:
                cov, inv = _refactor_state(new, c, noise_variance)
                break
            inv -= (d / denom) * np.outer(bj, bj.conj())
            cov += d * np.outer(cj, cj.conj())
    u = state.u + (z - new) / (eta * beta) if beta > 0 else state.u
    return DecoderState(new, cov, inv, z, u, t_next, eta * penalties.step_decay)


def _assign_final(gamma: np.ndarray, active: np.ndarray, registry: ClassRegistry,
                  floor: float) -> tuple[dict[int, int], int]:
    lg = np.log(np.maximum(gamma[active], floor))
    dist = np.abs(lg[:, None] - registry.log_gains[None, :])
    cls, conflicts = match_unique(dist)
    return {int(j): int(k) for j, k in zip(active, cls)}, conflicts


def decode_subslot(sample_cov: np.ndarray, codebook, registry: ClassRegistry,
                   penalties: PenaltyConfig, warm_start: MlEstimate | np.ndarray | None,
                   subslot: int, noise_variance: float, subblock_bits: int, *,
                   truth: np.ndarray | None = None, objective: bool = False,
                   keep_state: bool = False) -> SubSlotDecodeResult:
    """Detect and stitch the codewords of sub-slot ``subslot`` (1-based, >= 2).

    Iterates :func:`proximal_iteration` from the ML warm start, keeps the
    ``K`` largest entries, assigns each to a distinct class by minimum
    log-Euclidean distance (conflicts resolved by :func:`match_unique`),
    updates ``registry`` in place and returns the unmapped fragments.

    ``truth`` (the true activity vector) enables an MSE-vs-truth trace;
    ``objective`` records the P1 objective along the iterates.
    """
    if len(registry) == 0:
        raise DomainError("class registry is empty")
    if subslot < 2:
        raise DomainError("integrated decoding starts at sub-slot 2")
    c = _matrix(codebook)
    n = c.shape[1]
    if warm_start is None or penalties.start == "zero":
        gamma0 = np.zeros(n)
    else:
        gamma0 = warm_start.gamma if isinstance(warm_start, MlEstimate) else warm_start
    state = initial_state(gamma0, c, noise_variance, penalties.step_size)
    mse, truth_mse, obj = [], [], []
    if truth is not None:
        truth_mse.append(float(np.sum((state.gamma - truth) ** 2) / n))
    if objective:
        obj.append(p1_objective(state.gamma, sample_cov, c, noise_variance, registry, penalties))
    iterations = 0
    for _ in range(penalties.max_iterations):
        nxt = proximal_iteration(state, c, sample_cov, registry, penalties, noise_variance)
        iterations += 1
        change = float(np.sum((nxt.gamma - state.gamma) ** 2) / n)
        mse.append(change)
        state = nxt
        if truth is not None:
            truth_mse.append(float(np.sum((state.gamma - truth) ** 2) / n))
        if objective:
            obj.append(p1_objective(state.gamma, sample_cov, c, noise_variance, registry, penalties))
        if change < penalties.tolerance:
            break
    gamma_hat = state.gamma
    active = top_k(gamma_hat, len(registry))
    assignments, conflicts = _assign_final(gamma_hat, active, registry, penalties.gamma_floor)
    if conflicts:
        log.debug("sub-slot %d: %d stitch conflicts", subslot, conflicts)
    registry.absorb(assignments, gamma_hat, penalties.gamma_floor)
    fragments = {k: unmap_index(j + 1, subblock_bits) for j, k in assignments.items()}
    return SubSlotDecodeResult(subslot, gamma_hat, active, assignments, fragments, mse,
                               iterations, conflicts, obj, truth_mse,
                               state if keep_state else None)


def _first_subslot(sample_cov, c, noise_variance, detection, threshold, dim, subblock_bits,
                   boost, rng):
    est = solve_p0(sample_cov, c, noise_variance, detection, rng=rng)
    gamma = est.gamma / boost
    active, _ = estimate_active_count(gamma, threshold)
    registry = init_classes(active, gamma, dim) if active.size else None
    fragments = {k: unmap_index(int(j) + 1, subblock_bits) for k, j in enumerate(active)}
    result = SubSlotDecodeResult(1, gamma, active, {int(j): k for k, j in enumerate(active)},
                                 fragments, [], est.iterations)
    return registry, result


def iter_decode(signals: Iterable[np.ndarray], codebook, noise_variance: float,
                penalties: PenaltyConfig, detection: DetectionConfig, *,
                threshold: float, subblock_bits: int,
                first_subslot_boost: float = 1.0,
                truths: list[np.ndarray] | None = None,
                objective: bool = False,
                rng: np.random.Generator | None = None) -> Iterator[tuple[SubSlotDecodeResult, ClassRegistry | None]]:
    """Decode sub-slot by sub-slot, yielding each result before reading the next signal.

    Yields ``(result, registry)``; the registry is ``None`` when sub-slot 1
    detected nothing, after which iteration stops.
    """
    c = _matrix(codebook)
    registry = None
    for l, y in enumerate(signals, start=1):
        s = sample_covariance(y)
        if l == 1:
            registry, res = _first_subslot(s, c, noise_variance, detection, threshold,
                                           np.shape(y)[1], subblock_bits,
                                           first_subslot_boost, rng)
            yield res, registry
            if registry is None:
                return
            continue
        warm = solve_p0(s, c, noise_variance, detection, rng=rng) if penalties.start == "ml" else None
        truth = truths[l - 1] if truths is not None else None
        res = decode_subslot(s, c, registry, penalties, warm, l, noise_variance, subblock_bits,
                             truth=truth, objective=objective)
        yield res, registry


def decode_session(signals: Iterable[np.ndarray], codebook, noise_variance: float,
                   penalties: PenaltyConfig | None = None,
                   detection: DetectionConfig | None = None, *,
                   threshold: float, subblock_bits: int,
                   first_subslot_boost: float = 1.0,
                   truths: list[np.ndarray] | None = None,
                   objective: bool = False,
                   rng: np.random.Generator | None = None) -> SessionResult:
    """Run the integrated decoder over a whole slot and assemble messages.

    Returns an empty message list (with a warning) when sub-slot 1 detects
    no active codewords.
    """
    penalties = penalties or PenaltyConfig()
    detection = detection or DetectionConfig()
    results: list[SubSlotDecodeResult] = []
    registry = None
    for res, registry in iter_decode(signals, codebook, noise_variance, penalties, detection,
                                     threshold=threshold, subblock_bits=subblock_bits,
                                     first_subslot_boost=first_subslot_boost,
                                     truths=truths, objective=objective, rng=rng):
        results.append(res)
    first = results[0]
    if registry is None:
        msg = "no active UEs detected in sub-slot 1"
        log.warning(msg)
        return SessionResult([], results, 0, first.active, [msg])
    messages = []
    for k in range(len(registry)):
        frags = [r.fragments[k] for r in results if k in r.fragments]
        bits = np.concatenate(frags).astype(np.uint8)
        cols = registry.members[k]
        messages.append(Message(bits, tuple(int(j) + 1 for j in cols)))
    return SessionResult(messages, results, len(registry), first.active)
