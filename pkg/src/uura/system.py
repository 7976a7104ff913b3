"""Transmit side and channel of uncoupled unsourced random access.

Conventions
-----------
* Sub-block integers ``i`` are 1-based, ``i = big_endian(bits) + 1`` in
  ``[1, 2**J]``. Codeword *columns* are 0-based, ``column = i - 1``; every
  index list handed to or returned by a decoder is a column index.
* Transmit power is folded into the per-UE effective gain, so the activity
  vector entry for column ``j`` is the summed folded gain of all UEs that sent
  ``j`` in that sub-slot.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DomainError

__all__ = [
    "SystemConfig",
    "Codebook",
    "Message",
    "LargeScaleFading",
    "GroundTruth",
    "Trial",
    "generate_codebook",
    "map_subblock",
    "unmap_index",
    "segment_message",
    "assemble_message",
    "path_loss_db",
    "draw_large_scale_fading",
    "draw_messages",
    "draw_small_scale",
    "ground_truth",
    "synthesize_received_signal",
    "sample_covariance",
    "simulate_trial",
    "save_trial",
    "load_trial",
]

GAIN_MODELS = ("pathloss", "equal")


@dataclass(frozen=True)
class SystemConfig:
    """Link-level parameters. Defaults are the full-scale reference setup.

    ``gain_model`` selects how per-UE receive SNRs are set:

    ``"pathloss"``
        Common transmit power; a UE at the cell edge sees ``target_snr_db``
        and closer UEs are stronger by their path-loss advantage, capped at
        ``max_snr_spread_db`` (near-UE power back-off).
    ``"equal"``
        Power control puts every UE at exactly ``target_snr_db``.
    """

    total_users: int = 500
    active_users: int = 50
    antennas: int = 32
    message_bits: int = 96
    subblock_bits: int = 12
    subslots: int = 8
    codeword_length: int = 100
    noise_variance: float = 1.0
    target_snr_db: float = 10.0
    cell_radius_km: float = 0.5
    seed: int = 0
    gain_model: str = "pathloss"
    max_snr_spread_db: float = 40.0
    min_distance_km: float = 0.001
    first_subslot_snr_db: float | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("total_users", "active_users", "antennas", "message_bits",
                    "subblock_bits", "subslots", "codeword_length")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.message_bits != self.subslots * self.subblock_bits:
            raise ConfigError(
                f"message_bits ({self.message_bits}) must equal subslots * "
                f"subblock_bits ({self.subslots} * {self.subblock_bits})"
            )
        if self.active_users > self.total_users:
            raise ConfigError("active_users must not exceed total_users")
        if self.codeword_length > self.codebook_size:
            raise ConfigError(
                f"codeword_length {self.codeword_length} exceeds 2**J = {self.codebook_size}"
            )
        if self.active_users >= self.codebook_size:
            raise ConfigError("active_users must be smaller than 2**J")
        if not self.noise_variance > 0:
            raise ConfigError("noise_variance must be positive")
        if not self.cell_radius_km > 0:
            raise ConfigError("cell_radius_km must be positive")
        if not 0 < self.min_distance_km < self.cell_radius_km:
            raise ConfigError("min_distance_km must lie in (0, cell_radius_km)")
        if self.gain_model not in GAIN_MODELS:
            raise ConfigError(f"gain_model must be one of {GAIN_MODELS}")
        if self.max_snr_spread_db < 0:
            raise ConfigError("max_snr_spread_db must be nonnegative")

    @property
    def codebook_size(self) -> int:
        return 1 << self.subblock_bits

    @property
    def reference_gain(self) -> float:
        """Folded gain of a UE received at exactly ``target_snr_db``."""
        return self.noise_variance * 10.0 ** (self.target_snr_db / 10.0)

    @property
    def first_subslot_boost(self) -> float:
        """Linear power boost applied to every UE in sub-slot 1."""
        if self.first_subslot_snr_db is None:
            return 1.0
        return 10.0 ** ((self.first_subslot_snr_db - self.target_snr_db) / 10.0)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Codebook:
    """``n0 x 2**J`` partial-DFT codebook with unit-norm columns."""

    matrix: np.ndarray
    rows: tuple[int, ...]

    @property
    def length(self) -> int:
        return self.matrix.shape[0]

    @property
    def size(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class Message:
    bits: np.ndarray
    sub_blocks: tuple[int, ...]

    @classmethod
    def from_bits(cls, bits, subblock_bits: int) -> "Message":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(bits, segment_message(bits, subblock_bits))

    @classmethod
    def from_indices(cls, indices: Sequence[int], subblock_bits: int) -> "Message":
        """Message from 1-based sub-block integers."""
        return cls(assemble_message(indices, subblock_bits), tuple(int(i) for i in indices))

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    def __repr__(self):
        return f"Message({''.join(map(str, self.bits.tolist()))})"


@dataclass(frozen=True)
class LargeScaleFading:
    distances_km: np.ndarray
    path_loss_db: np.ndarray
    gains: np.ndarray


@dataclass(frozen=True)
class GroundTruth:
    """Per-sub-slot truth. ``columns[k][l]`` is UE k's codeword column in slot l."""

    columns: np.ndarray
    active: tuple[np.ndarray, ...]
    gains: tuple[np.ndarray, ...]
    messages: tuple[Message, ...]

    @property
    def subslots(self) -> int:
        return len(self.active)


@dataclass
class Trial:
    config: SystemConfig
    trial_index: int
    codebook: Codebook
    fading: LargeScaleFading
    truth: GroundTruth
    signals: list[np.ndarray] = field(default_factory=list)

    def sample_covariances(self) -> list[np.ndarray]:
        return [sample_covariance(y) for y in self.signals]


def generate_codebook(config: SystemConfig, rng: np.random.Generator) -> Codebook:
    """Pick ``n0`` distinct rows of the ``2**J``-point DFT, columns scaled to unit norm."""
    n, n0 = config.codebook_size, config.codeword_length
    if n0 > n:
        raise ConfigError(f"codeword_length {n0} exceeds 2**J = {n}")
    rows = np.sort(rng.choice(n, size=n0, replace=False))
    phase = np.outer(rows, np.arange(n)) % n
    matrix = np.exp(-2j * np.pi * phase / n) / math.sqrt(n0)
    return Codebook(matrix, tuple(int(r) for r in rows))


def map_subblock(bits) -> int:
    """Big-endian value of ``bits`` plus one."""
    value = 0
    for b in np.asarray(bits).ravel():
        if b not in (0, 1):
            raise DomainError(f"bit values must be 0 or 1, got {b}")
        value = (value << 1) | int(b)
    return value + 1


def unmap_index(index: int, subblock_bits: int) -> np.ndarray:
    """Inverse of :func:`map_subblock`."""
    index = int(index)
    if not 1 <= index <= (1 << subblock_bits):
        raise DomainError(f"index {index} outside [1, {1 << subblock_bits}]")
    value = index - 1
    shifts = np.arange(subblock_bits - 1, -1, -1)
    return ((value >> shifts) & 1).astype(np.uint8)


def segment_message(bits, subblock_bits: int) -> tuple[int, ...]:
    bits = np.asarray(bits)
    if bits.size % subblock_bits:
        raise DomainError("message length is not a multiple of the sub-block length")
    return tuple(map_subblock(chunk) for chunk in bits.reshape(-1, subblock_bits))


def assemble_message(indices: Sequence[int], subblock_bits: int) -> np.ndarray:
    if len(indices) == 0:
        return np.zeros(0, dtype=np.uint8)
    return np.concatenate([unmap_index(i, subblock_bits) for i in indices])


def path_loss_db(distance_km) -> np.ndarray:
    """Large-scale channel gain in dB: ``-128.1 - 37.6 log10(d)`` with d in km."""
    return -128.1 - 37.6 * np.log10(np.asarray(distance_km, dtype=float))


def draw_large_scale_fading(config: SystemConfig, rng: np.random.Generator) -> LargeScaleFading:
    """Draw UE distances and derive the folded (power x path-loss) gains.

    Distances are uniform on ``[min_distance_km, cell_radius_km]``. Raw path
    loss is reported for diagnostics; the folded gains follow ``gain_model``.
    """
    d = rng.uniform(config.min_distance_km, config.cell_radius_km, size=config.active_users)
    pl = path_loss_db(d)
    if config.gain_model == "equal":
        snr_db = np.full(config.active_users, float(config.target_snr_db))
    else:
        advantage = pl - path_loss_db(config.cell_radius_km)
        snr_db = config.target_snr_db + np.minimum(advantage, config.max_snr_spread_db)
    gains = config.noise_variance * 10.0 ** (snr_db / 10.0)
    return LargeScaleFading(d, pl, gains)


def draw_messages(config: SystemConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Uniform b-bit messages, one per active UE, with duplicates redrawn."""
    seen: set[bytes] = set()
    out = []
    while len(out) < config.active_users:
        bits = rng.integers(0, 2, size=config.message_bits, dtype=np.uint8)
        key = bits.tobytes()
        if key in seen:
            continue
        seen.add(key)
        out.append(bits)
    return out


def draw_small_scale(rng: np.random.Generator, users: int, antennas: int) -> np.ndarray:
    """``users x antennas`` i.i.d. CN(0, 1) entries."""
    return (rng.standard_normal((users, antennas))
            + 1j * rng.standard_normal((users, antennas))) / math.sqrt(2.0)


def ground_truth(columns: np.ndarray, gains: np.ndarray, codebook_size: int,
                 messages: Sequence[Message], slot_scale: Sequence[float] | None = None) -> GroundTruth:
    """Collapse per-UE codeword choices into per-slot active lists and activity vectors.

    UEs sharing a column in one slot produce a single active entry whose
    gain is the sum of theirs.
    """
    columns = np.asarray(columns, dtype=np.int64)
    n_slots = columns.shape[1]
    scale = np.ones(n_slots) if slot_scale is None else np.asarray(slot_scale, dtype=float)
    active, per_slot = [], []
    for l in range(n_slots):
        gamma = np.zeros(codebook_size)
        np.add.at(gamma, columns[:, l], gains * scale[l])
        per_slot.append(gamma)
        active.append(np.flatnonzero(gamma > 0))
    return GroundTruth(columns, tuple(active), tuple(per_slot), tuple(messages))


def synthesize_received_signal(codebook: Codebook, columns: np.ndarray, gains: np.ndarray,
                               small_scale: np.ndarray, noise_variance: float,
                               rng: np.random.Generator | None) -> np.ndarray:
    """``Y = sum_k sqrt(g_k) c_{col_k} h_k^T + W`` for one sub-slot.

    Parameters
    ----------
    columns : (K,) int
        Codeword column sent by each UE in this sub-slot.
    gains : (K,) float
        Folded gains for this sub-slot.
    small_scale : (K, M) complex
        Rows ``h_k^T``.
    rng : Generator or None
        Noise source; ``None`` (or zero ``noise_variance``) gives a noiseless signal.
    """
    n0 = codebook.length
    m = small_scale.shape[1] if np.ndim(small_scale) == 2 else 0
    columns = np.asarray(columns, dtype=np.int64)
    if columns.size:
        y = codebook.matrix[:, columns] @ (np.sqrt(gains)[:, None] * small_scale)
    else:
        y = np.zeros((n0, m), dtype=complex)
    if rng is not None and noise_variance > 0:
        w = (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
        y = y + math.sqrt(noise_variance / 2.0) * w
    return y


def sample_covariance(y: np.ndarray) -> np.ndarray:
    """``(1/M) Y Y^H``."""
    y = np.asarray(y)
    if y.ndim == 1:
        y = y[:, None]
    return (y @ y.conj().T) / y.shape[1]


Encoder = Callable[[np.ndarray], Sequence[int]]


def simulate_trial(config: SystemConfig, trial_index: int = 0, *,
                   codebook: Codebook | None = None,
                   encoder: Encoder | None = None,
                   antennas: int | None = None,
                   gains: np.ndarray | None = None) -> Trial:
    """Draw one complete slot: messages, fading, and all received signals.

    Random draws come from named streams keyed by ``(config.seed, name,
    trial_index)``; the codebook stream is trial-independent.

    ``encoder`` maps message bits to 1-based sub-block integers (default:
    plain segmentation); its output length sets the number of sub-slots.
    ``gains`` overrides the drawn folded gains (used by controlled tests).
    """
    seed = config.seed
    if codebook is None:
        codebook = generate_codebook(config, rngmod.stream(seed, "codebook"))
    m = config.antennas if antennas is None else antennas
    bits = draw_messages(config, rngmod.stream(seed, "messages", trial_index))
    fading = draw_large_scale_fading(config, rngmod.stream(seed, "fading", trial_index))
    if gains is not None:
        gains = np.asarray(gains, dtype=float)
        if gains.shape != (config.active_users,):
            raise ConfigError("gain override must have one entry per active UE")
        fading = LargeScaleFading(fading.distances_km, fading.path_loss_db, gains)
    encode = encoder or (lambda b: segment_message(b, config.subblock_bits))
    messages = [Message(b, tuple(encode(b))) for b in bits]
    columns = np.array([[i - 1 for i in msg.sub_blocks] for msg in messages], dtype=np.int64)
    n_slots = columns.shape[1]
    scale = np.ones(n_slots)
    scale[0] = config.first_subslot_boost
    truth = ground_truth(columns, fading.gains, codebook.size, messages, scale)
    signals = []
    for l in range(n_slots):
        h = draw_small_scale(rngmod.stream(seed, "channel", trial_index, l), config.active_users, m)
        y = synthesize_received_signal(codebook, columns[:, l], fading.gains * scale[l], h,
                                       config.noise_variance,
                                       rngmod.stream(seed, "noise", trial_index, l))
        signals.append(y)
    return Trial(config, trial_index, codebook, fading, truth, signals)


SCHEMA = "uura.trial/1"


def _complex_to_json(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "re": a.real.ravel().tolist(), "im": a.imag.ravel().tolist()}


def _complex_from_json(d: dict) -> np.ndarray:
    return (np.asarray(d["re"]) + 1j * np.asarray(d["im"])).reshape(d["shape"])


def save_trial(path, trial: Trial) -> None:
    """Write a trial as a self-describing JSON container for decoder-only replay."""
    doc = {
        "schema": SCHEMA,
        "config": dataclasses.asdict(trial.config),
        "seed": trial.config.seed,
        "trial_index": trial.trial_index,
        "codebook_rows": list(trial.codebook.rows),
        "gains": trial.fading.gains.tolist(),
        "distances_km": trial.fading.distances_km.tolist(),
        "columns": trial.truth.columns.tolist(),
        "active": [a.tolist() for a in trial.truth.active],
        "slot_gains": [
            {"columns": a.tolist(), "gains": g[a].tolist()}
            for a, g in zip(trial.truth.active, trial.truth.gains)
        ],
        "messages": ["".join(map(str, m.bits.tolist())) for m in trial.truth.messages],
        "sub_blocks": [list(m.sub_blocks) for m in trial.truth.messages],
        "signals": [_complex_to_json(y) for y in trial.signals],
    }
    Path(path).write_text(json.dumps(doc))


def load_trial(path) -> Trial:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != SCHEMA:
        raise ConfigError(f"unsupported trial container schema {doc.get('schema')!r}")
    config = SystemConfig(**doc["config"])
    rows = np.asarray(doc["codebook_rows"], dtype=np.int64)
    n = config.codebook_size
    matrix = np.exp(-2j * np.pi * (np.outer(rows, np.arange(n)) % n) / n) / math.sqrt(len(rows))
    codebook = Codebook(matrix, tuple(int(r) for r in rows))
    messages = [Message(np.array([int(c) for c in s], dtype=np.uint8), tuple(sb))
                for s, sb in zip(doc["messages"], doc["sub_blocks"])]
    gains = np.asarray(doc["gains"], dtype=float)
    fading = LargeScaleFading(np.asarray(doc["distances_km"]), path_loss_db(doc["distances_km"]), gains)
    slot_gains = []
    for entry in doc["slot_gains"]:
        g = np.zeros(n)
        g[np.asarray(entry["columns"], dtype=np.int64)] = entry["gains"]
        slot_gains.append(g)
    truth = GroundTruth(np.asarray(doc["columns"], dtype=np.int64),
                        tuple(np.asarray(a, dtype=np.int64) for a in doc["active"]),
                        tuple(slot_gains), tuple(messages))
    signals = [_complex_from_json(s) for s in doc["signals"]]
    return Trial(config, int(doc["trial_index"]), codebook, fading, truth, signals)
