"""Log-Euclidean geometry on the Hermitian positive-definite (HPD) manifold.

Codeword covariance matrices in the decoder are always scaled identities
``gain * I_M``, so every operation here has a closed-form scalar fast path.
The dense eigendecomposition path handles general HPD matrices and is what
the fast path is validated against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DomainError

__all__ = [
    "ScaledIdentity",
    "LogCenter",
    "check_hpd",
    "matrix_log",
    "matrix_exp",
    "log_euclidean_distance",
    "geometric_center",
    "update_center",
]

HERMITIAN_RTOL = 1e-12
PD_RTOL = 1e-12


@dataclass(frozen=True)
class ScaledIdentity:
    """The HPD matrix ``gain * I_dim``."""

    dim: int
    gain: float

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError(f"dim must be positive, got {self.dim}")
        if not (self.gain > 0 and math.isfinite(self.gain)):
            raise DomainError(f"gain must be finite and > 0, got {self.gain}")

    @property
    def log_gain(self) -> float:
        return math.log(self.gain)

    def dense(self) -> np.ndarray:
        return self.gain * np.eye(self.dim, dtype=complex)


@dataclass(frozen=True)
class LogCenter:
    """Streaming log-domain geometric center of a class of scaled identities.

    Only the running mean of log-gains is stored; ``count`` is the number of
    members absorbed so far.
    """

    dim: int
    log_gain: float
    count: int = 1

    @classmethod
    def from_member(cls, member: ScaledIdentity) -> "LogCenter":
        return cls(member.dim, member.log_gain, 1)

    @property
    def gain(self) -> float:
        return math.exp(self.log_gain)

    def as_scaled_identity(self) -> ScaledIdentity:
        return ScaledIdentity(self.dim, self.gain)


Hpd = Union[np.ndarray, ScaledIdentity]


def check_hpd(a: np.ndarray) -> np.ndarray:
    """Validate ``a`` as HPD and return its eigenvalues (ascending).

    Hermitian means ``||A - A^H||_F <= 1e-12 ||A||_F``; positive definite means
    the smallest eigenvalue exceeds ``dim * 1e-12`` times the largest.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    scale = np.linalg.norm(a)
    if np.linalg.norm(a - a.conj().T) > HERMITIAN_RTOL * max(scale, 1.0):
        raise DomainError("matrix is not Hermitian")
    w = np.linalg.eigvalsh(a)
    n = a.shape[0]
    if not w[0] > n * PD_RTOL * w[-1] or w[-1] <= 0:
        raise DomainError(
            f"matrix is not positive definite: eigenvalue {w[0]:.6g} "
            f"(largest {w[-1]:.6g})"
        )
    return w


def _herm_eig(a: np.ndarray):
    a = np.asarray(a)
    check_hpd(a)
    return np.linalg.eigh(0.5 * (a + a.conj().T))


def matrix_log(a: Hpd) -> np.ndarray:
    """Principal (Hermitian) logarithm of an HPD matrix.

    Computed from the Hermitian eigendecomposition ``A = V diag(w) V^H`` as
    ``V diag(log w) V^H``, which is exact for every HPD input (the Mercator
    power series only converges when ``||I - A|| < 1``).

    Raises
    ------
    DomainError
        If ``a`` is not Hermitian or not positive definite; the message names
        the offending eigenvalue.
    """
    if isinstance(a, ScaledIdentity):
        return a.log_gain * np.eye(a.dim, dtype=complex)
    w, v = _herm_eig(a)
    return (v * np.log(w)) @ v.conj().T


def matrix_exp(h: np.ndarray) -> np.ndarray:
    """Exponential of a Hermitian matrix (inverse of :func:`matrix_log`)."""
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {h.shape}")
    if np.linalg.norm(h - h.conj().T) > HERMITIAN_RTOL * max(np.linalg.norm(h), 1.0):
        raise DomainError("matrix is not Hermitian")
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    return (v * np.exp(w)) @ v.conj().T


def _dim(a: Hpd) -> int:
    return a.dim if isinstance(a, ScaledIdentity) else np.asarray(a).shape[0]


def log_euclidean_distance(a: Hpd, b: Hpd) -> float:
    """``||Log(a) - Log(b)||_F``.

    Two scaled identities take the scalar path ``sqrt(M) |ln g_a - ln g_b|``
    without forming matrices.
    """
    if _dim(a) != _dim(b):
        raise DomainError(f"dimension mismatch: {_dim(a)} vs {_dim(b)}")
    if isinstance(a, ScaledIdentity) and isinstance(b, ScaledIdentity):
        return math.sqrt(a.dim) * abs(a.log_gain - b.log_gain)
    return float(np.linalg.norm(matrix_log(a) - matrix_log(b)))


def geometric_center(members: Sequence[Hpd]) -> Hpd:
    """Log-Euclidean Frechet mean ``exp(mean_i Log(R_i))``.

    For scaled identities the result is the scaled identity at the geometric
    mean of the gains; the log-sum uses :func:`math.fsum`, so the result does
    not depend on the order of ``members``.
    """
    members = list(members)
    if not members:
        raise DomainError("geometric center of an empty set")
    dims = {_dim(m) for m in members}
    if len(dims) != 1:
        raise DomainError(f"members have mixed dimensions {sorted(dims)}")
    if all(isinstance(m, ScaledIdentity) for m in members):
        mean_log = math.fsum(m.log_gain for m in members) / len(members)
        return ScaledIdentity(members[0].dim, math.exp(mean_log))
    logs = [matrix_log(m) for m in members]
    return matrix_exp(sum(logs) / len(logs))


def update_center(center: LogCenter, new: ScaledIdentity) -> LogCenter:
    """Absorb one more member into a streaming center."""
    if center.dim != new.dim:
        raise DomainError(f"dimension mismatch: {center.dim} vs {new.dim}")
    n = center.count
    return LogCenter(center.dim, (n * center.log_gain + new.log_gain) / (n + 1), n + 1)


def center_from_log_gains(dim: int, log_gains: Iterable[float]) -> LogCenter:
    """Batch construction of a :class:`LogCenter` from member log-gains."""
    values = list(log_gains)
    if not values:
        raise DomainError("geometric center of an empty set")
    return LogCenter(dim, math.fsum(values) / len(values), len(values))
