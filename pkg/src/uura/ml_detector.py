"""Maximum-likelihood covariance-based codeword detection (no regularization).

The negative log-likelihood of the activity vector ``gamma`` given the
sample covariance ``S`` of one sub-slot is::

    f(gamma) = ln|Psi| + tr(Psi^{-1} S),   Psi = C diag(gamma) C^H + sigma^2 I

It is minimized over ``gamma >= 0`` by cyclic coordinate descent. Each
coordinate step is the exact 1-D minimizer, so ``f`` never increases, and
``Psi^{-1}`` and ``ln|Psi|`` are carried along by Sherman-Morrison rank-1
updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .classes import ClassRegistry, NoActiveUsers
from .errors import ConfigError, DomainError

__all__ = [
    "DetectionConfig",
    "MlEstimate",
    "covariance",
    "ml_objective",
    "solve_p0",
    "estimate_active_count",
    "init_classes",
]

SM_DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class DetectionConfig:
    """Sub-slot 1 detection and P0 solver settings.

    ``threshold`` is the activity threshold on estimated gains. When ``None``
    it resolves to ``threshold_factor`` times the folded gain of a UE received
    exactly at the target SNR (see :meth:`resolve_threshold`).

    ``sweep_tolerance`` is relative: sweeps stop once the largest coordinate
    change in a sweep is below ``sweep_tolerance * max(max(gamma), sigma^2)``.
    """

    threshold: float | None = None
    threshold_factor: float = 0.1
    max_sweeps: int = 100
    sweep_tolerance: float = 1e-6
    random_order: bool = False
    refactor_every: int = 50
    screen: bool = True

    def __post_init__(self):
        if self.threshold is not None and not self.threshold > 0:
            raise ConfigError("threshold must be positive")
        if not self.threshold_factor > 0:
            raise ConfigError("threshold_factor must be positive")
        if self.max_sweeps < 1 or self.refactor_every < 1:
            raise ConfigError("max_sweeps and refactor_every must be >= 1")
        if not self.sweep_tolerance > 0:
            raise ConfigError("sweep_tolerance must be positive")

    def resolve_threshold(self, reference_gain: float) -> float:
        if self.threshold is not None:
            return float(self.threshold)
        return self.threshold_factor * reference_gain


@dataclass
class MlEstimate:
    gamma: np.ndarray
    objective: float
    iterations: int
    cov_inv: np.ndarray
    logdet: float
    converged: bool = False
    updates: int = 0
    refactorizations: int = 0
    objective_trace: list[float] = field(default_factory=list)


def _matrix(codebook) -> np.ndarray:
    return getattr(codebook, "matrix", codebook)


def covariance(gamma: np.ndarray, codebook, noise_variance: float) -> np.ndarray:
    """``C diag(gamma) C^H + sigma^2 I``."""
    c = _matrix(codebook)
    psi = (c * gamma) @ c.conj().T
    psi[np.diag_indices_from(psi)] += noise_variance
    return 0.5 * (psi + psi.conj().T)


def ml_objective(gamma: np.ndarray, sample_cov: np.ndarray, codebook, noise_variance: float) -> float:
    """Dense evaluation of ``ln|Psi| + tr(Psi^{-1} S)``."""
    psi = covariance(np.asarray(gamma, dtype=float), codebook, noise_variance)
    sign, logdet = np.linalg.slogdet(psi)
    if sign.real <= 0:
        raise DomainError("model covariance is not positive definite")
    tr = np.trace(np.linalg.solve(psi, sample_cov)).real
    return float(logdet + tr)


def _check_psd(sample_cov: np.ndarray) -> None:
    s = np.asarray(sample_cov)
    n = s.shape[0]
    if s.ndim != 2 or s.shape != (n, n):
        raise DomainError("sample covariance must be square")
    scale = max(np.abs(s).max(initial=0.0), 1e-300)
    if np.abs(s - s.conj().T).max(initial=0.0) > 1e-10 * scale:
        raise DomainError("sample covariance is not Hermitian")
    w = np.linalg.eigvalsh(0.5 * (s + s.conj().T))
    if w[0] < -1e-10 * max(w[-1], 1e-300):
        raise DomainError(f"sample covariance is not PSD: eigenvalue {w[0]:.3g}")


def _refactor(gamma, c, noise_variance):
    psi = covariance(gamma, c, noise_variance)
    inv = np.linalg.inv(psi)
    inv = 0.5 * (inv + inv.conj().T)
    _, logdet = np.linalg.slogdet(psi)
    return inv, float(logdet)


def solve_p0(sample_cov: np.ndarray, codebook, noise_variance: float,
             config: DetectionConfig | None = None, *,
             init: np.ndarray | None = None,
             rng: np.random.Generator | None = None,
             trace: bool = False) -> MlEstimate:
    """Coordinate-descent ML estimate of the activity vector.

    For coordinate ``j`` with ``b = Psi^{-1} c_j``, ``q = c_j^H b`` and
    ``p = b^H S b`` the step is ``delta = max((p - q) / q**2, -gamma_j)``,
    the exact minimizer of ``f`` along that coordinate on ``gamma_j >= 0``.

    When ``config.screen`` is set, each sweep first evaluates every
    coordinate's would-be step from a snapshot of ``Psi^{-1}`` (two matrix
    products) and visits only coordinates that are nonzero or would move off
    zero. Coordinates skipped this way are exactly those whose step would be
    zero at the snapshot, so the fixed points are unchanged.

    Parameters
    ----------
    sample_cov : (n0, n0) Hermitian PSD
    codebook : Codebook or (n0, N) array
    noise_variance : float
    config : DetectionConfig
    init : (N,) array, optional
        Starting point; zero by default.
    rng : Generator, optional
        Needed when ``config.random_order`` is set.
    trace : bool
        Record ``f`` after every coordinate update.
    """
    cfg = config or DetectionConfig()
    c = _matrix(codebook)
    n0, n = c.shape
    s = np.asarray(sample_cov)
    _check_psd(s)
    s = 0.5 * (s + s.conj().T)
    if init is None:
        gamma = np.zeros(n)
        sinv = np.eye(n0, dtype=complex) / noise_variance
        logdet = n0 * math.log(noise_variance)
    else:
        gamma = np.maximum(np.asarray(init, dtype=float).copy(), 0.0)
        sinv, logdet = _refactor(gamma, c, noise_variance)
    tr = float(np.real(np.sum(sinv * s.T)))
    obj_trace = [logdet + tr] if trace else []
    if cfg.random_order and rng is None:
        rng = np.random.default_rng(0)

    converged = False
    sweeps = updates = refactors = 0
    for sweep in range(cfg.max_sweeps):
        sweeps = sweep + 1
        if cfg.screen:
            b_all = sinv @ c
            q_all = np.real(np.sum(c.conj() * b_all, axis=0))
            p_all = np.real(np.sum(b_all.conj() * (s @ b_all), axis=0))
            order = np.flatnonzero((gamma > 0) | (p_all > q_all))
        else:
            order = np.arange(n)
        if cfg.random_order:
            order = rng.permutation(order)
        biggest = 0.0
        for j in order:
            cj = c[:, j]
            b = sinv @ cj
            q = float(np.real(np.vdot(cj, b)))
            p = float(np.real(np.vdot(b, s @ b)))
            delta = max((p - q) / (q * q), -gamma[j])
            if delta == 0.0:
                continue
            denom = 1.0 + delta * q
            if denom < SM_DENOM_FLOOR:
                sinv, logdet = _refactor(gamma, c, noise_variance)
                tr = float(np.real(np.sum(sinv * s.T)))
                refactors += 1
                b = sinv @ cj
                q = float(np.real(np.vdot(cj, b)))
                p = float(np.real(np.vdot(b, s @ b)))
                delta = max((p - q) / (q * q), -gamma[j])
                denom = 1.0 + delta * q
                if delta == 0.0 or denom < SM_DENOM_FLOOR:
                    continue
            sinv -= (delta / denom) * np.outer(b, b.conj())
            logdet += math.log(denom)
            tr -= delta * p / denom
            gamma[j] += delta
            updates += 1
            biggest = max(biggest, abs(delta))
            if trace:
                obj_trace.append(logdet + tr)
        if sweeps % cfg.refactor_every == 0:
            sinv, logdet = _refactor(gamma, c, noise_variance)
            tr = float(np.real(np.sum(sinv * s.T)))
            refactors += 1
        scale = max(float(gamma.max(initial=0.0)), noise_variance)
        if biggest < cfg.sweep_tolerance * scale:
            converged = True
            break
    return MlEstimate(gamma, logdet + tr, sweeps, sinv, logdet, converged,
                      updates, refactors, obj_trace)


def estimate_active_count(gamma: np.ndarray, threshold: float) -> tuple[np.ndarray, int]:
    """Columns with ``gamma > threshold`` (ascending) and their count."""
    active = np.flatnonzero(np.asarray(gamma) > threshold)
    return active, int(active.size)


def init_classes(active: np.ndarray, gamma: np.ndarray, dim: int) -> ClassRegistry:
    """One class per detected codeword, centered on its own estimated gain."""
    active = np.asarray(active, dtype=np.int64)
    if active.size == 0:
        raise NoActiveUsers("no active UEs detected in sub-slot 1")
    registry = ClassRegistry(dim)
    for j in active:
        registry.add_class(int(j), float(gamma[j]))
    return registry
