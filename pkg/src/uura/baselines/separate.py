"""Separate detection and stitching (UURA-SD).

Every sub-slot is decoded by plain ML detection; once the whole slot has
arrived, the ``L * K`` detected codewords are clustered on their log gains
with K-means and each cluster becomes one message.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..classes import match_unique
from ..ml_detector import DetectionConfig, estimate_active_count, solve_p0
from ..system import Message, sample_covariance
from ..decoder import SessionResult, SubSlotDecodeResult, top_k

__all__ = ["ClusterModel", "kmeans_1d", "uura_sd_decode"]


@dataclass
class ClusterModel:
    """K-means result on 1-D features.

    ``assignment[l]`` maps each codeword detected in sub-slot ``l`` to its
    cluster; ``objective`` is the within-cluster sum of squares.
    """

    centroids: np.ndarray
    labels: np.ndarray
    objective: float
    iterations: int
    objective_trace: list[float]
    assignment: list[dict[int, int]] | None = None

    @property
    def k(self) -> int:
        return int(self.centroids.size)


def _plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.size)]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(x.size)])
        else:
            centers.append(x[rng.choice(x.size, p=d2 / total)])
    return np.array(centers, dtype=float)


def _lloyd(x, centers, max_iter, tol):
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        d = (x[:, None] - centers[None, :]) ** 2
        labels = np.argmin(d, axis=1)
        trace.append(float(d[np.arange(x.size), labels].sum()))
        new = centers.copy()
        for k in range(centers.size):
            sel = labels == k
            if sel.any():
                new[k] = x[sel].mean()
        moved = float(np.max(np.abs(new - centers)))
        centers = new
        if moved < tol:
            break
    d = (x[:, None] - centers[None, :]) ** 2
    labels = np.argmin(d, axis=1)
    obj = float(d[np.arange(x.size), labels].sum())
    trace.append(obj)
    return centers, labels, obj, it, trace


def kmeans_1d(x, k: int, rng: np.random.Generator, *, restarts: int = 10,
              max_iter: int = 300, tol: float = 1e-9) -> ClusterModel:
    """Lloyd's algorithm with K-means++ seeding, best of ``restarts``.

    An empty cluster keeps its previous centroid.
    """
    x = np.asarray(x, dtype=float).ravel()
    if not 1 <= k <= x.size:
        raise ValueError(f"need 1 <= k <= {x.size}, got {k}")
    best = None
    for _ in range(restarts):
        c, labels, obj, it, trace = _lloyd(x, _plus_plus(x, k, rng), max_iter, tol)
        if best is None or obj < best.objective:
            best = ClusterModel(c, labels, obj, it, trace)
    return best


def uura_sd_decode(signals, codebook, noise_variance: float,
                   detection: DetectionConfig | None = None, *,
                   threshold: float, subblock_bits: int,
                   first_subslot_boost: float = 1.0,
                   rng: np.random.Generator | None = None,
                   restarts: int = 10) -> SessionResult:
    """Decode a full slot by per-sub-slot ML detection followed by K-means stitching.

    Sub-slot 1 is thresholded to fix ``K``; later sub-slots keep their ``K``
    largest entries. Within each sub-slot, codewords take distinct clusters
    via :func:`match_unique` on distance to the centroids.
    """
    detection = detection or DetectionConfig()
    rng = rng or np.random.default_rng(0)
    c = getattr(codebook, "matrix", codebook)
    signals = list(signals)
    gammas, results, active = [], [], []
    for l, y in enumerate(signals, start=1):
        est = solve_p0(sample_covariance(y), c, noise_variance, detection)
        g = est.gamma / first_subslot_boost if l == 1 else est.gamma
        if l == 1:
            act, k = estimate_active_count(g, threshold)
            if k == 0:
                res = SubSlotDecodeResult(1, g, act, {}, {}, [], est.iterations)
                msg = "no active UEs detected in sub-slot 1"
                return SessionResult([], [res], 0, act, [msg])
        else:
            act = top_k(g, k)
        gammas.append(g)
        active.append(act)
        results.append(SubSlotDecodeResult(l, g, act, {}, {}, [], est.iterations))

    feats = np.concatenate([np.log(np.maximum(g[a], 1e-300)) for g, a in zip(gammas, active)])
    model = kmeans_1d(feats, k, rng, restarts=restarts)
    assignment, conflicts = [], 0
    for g, a, res in zip(gammas, active, results):
        lg = np.log(np.maximum(g[a], 1e-300))
        cls, n_conf = match_unique(np.abs(lg[:, None] - model.centroids[None, :]))
        conflicts += n_conf
        res.assignments = {int(j): int(q) for j, q in zip(a, cls)}
        res.conflicts = n_conf
        assignment.append(res.assignments)
    model.assignment = assignment

    messages = []
    for q in range(k):
        cols = []
        for amap in assignment:
            inv = {v: j for j, v in amap.items()}
            cols.append(inv[q])
        messages.append(Message.from_indices([j + 1 for j in cols], subblock_bits))
    return SessionResult(messages, results, k, active[0])
