"""Stitching classes: one per detected UE, each with a log-domain center."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .mig import LogCenter, ScaledIdentity, update_center

__all__ = ["ClassRegistry", "NoActiveUsers", "nearest_class", "match_unique"]


class NoActiveUsers(DomainError):
    """Sub-slot 1 detection found no active codewords."""


@dataclass
class ClassRegistry:
    """Stitching state carried across sub-slots.

    ``members[k]`` lists the codeword column assigned to class ``k`` in each
    decoded sub-slot, in chronological order.
    """

    dim: int
    centers: list[LogCenter] = field(default_factory=list)
    members: list[list[int]] = field(default_factory=list)

    def __len__(self):
        return len(self.centers)

    @property
    def log_gains(self) -> np.ndarray:
        return np.array([c.log_gain for c in self.centers])

    def add_class(self, column: int, gain: float) -> None:
        self.centers.append(LogCenter.from_member(ScaledIdentity(self.dim, gain)))
        self.members.append([int(column)])

    def absorb(self, assignment: dict[int, int], gammas: np.ndarray, floor: float) -> None:
        """Append one sub-slot of assignments ``{column: class}`` and update centers.

        Members whose gain is at or below ``floor`` are recorded but do not move
        their class center (their log-gain carries no usable information).
        """
        by_class = {k: j for j, k in assignment.items()}
        if len(by_class) != len(assignment):
            raise DomainError("assignment maps two codewords to one class")
        for k in range(len(self)):
            j = by_class.get(k, -1)
            self.members[k].append(int(j))
            if j >= 0 and gammas[j] > floor:
                self.centers[k] = update_center(self.centers[k], ScaledIdentity(self.dim, float(gammas[j])))


def nearest_class(log_gamma: np.ndarray, log_centers: np.ndarray) -> np.ndarray:
    """Index of the nearest center for each log-gain; ties go to the lower class."""
    if log_centers.size == 0:
        raise DomainError("no classes to assign to")
    dist = np.abs(np.asarray(log_gamma)[:, None] - log_centers[None, :])
    return np.argmin(dist, axis=1)


def match_unique(dist: np.ndarray) -> tuple[np.ndarray, int]:
    """Assign each row (codeword) to a distinct column (class).

    Every row first claims its nearest class. When several rows claim one
    class, the closest keeps it (ties: lower row); the losers are then matched
    to unclaimed classes greedily in order of ascending distance.

    Returns the class of each row and the number of conflicts resolved.
    Requires ``rows <= columns``.
    """
    dist = np.asarray(dist, dtype=float)
    n_rows, n_cols = dist.shape
    if n_rows > n_cols:
        raise DomainError("more codewords than classes")
    choice = np.argmin(dist, axis=1)
    out = np.full(n_rows, -1, dtype=np.int64)
    claimed = np.zeros(n_cols, dtype=bool)
    losers = []
    for k in range(n_cols):
        rows = np.flatnonzero(choice == k)
        if rows.size == 0:
            continue
        winner = rows[np.argmin(dist[rows, k])]
        out[winner] = k
        claimed[k] = True
        losers.extend(int(r) for r in rows if r != winner)
    conflicts = len(losers)
    if losers:
        losers.sort()
        pairs = sorted(
            (dist[r, k], k, r) for r in losers for k in np.flatnonzero(~claimed)
        )
        pending = set(losers)
        for _, k, r in pairs:
            if r in pending and not claimed[k]:
                out[r] = k
                claimed[k] = True
                pending.discard(r)
    return out, conflicts
