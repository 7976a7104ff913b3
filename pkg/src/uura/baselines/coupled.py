"""Coupled random access with a tree code (CURA).

Each sub-block carries ``J - a_l`` fresh data bits followed by ``a_l``
parity bits, every parity bit a random binary combination of all earlier
data bits. The receiver keeps the ``K`` codewords of highest matched-filter
energy per sub-slot and links them by a depth-first search that discards
parity-inconsistent paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import rng as rngmod
from ..errors import ConfigError
from ..system import Message, map_subblock, unmap_index

__all__ = [
    "TreeCodeProfile",
    "TreeDecodeResult",
    "build_profile",
    "tree_encode",
    "tree_decode",
    "energy_detect",
    "coupled_decode",
]


@dataclass(frozen=True)
class TreeCodeProfile:
    """Parity layout of the tree code.

    ``parity[l]`` is ``a_l``; ``seed`` generates the parity matrices.
    """

    subblock_bits: int
    parity: tuple[int, ...]
    seed: int = 0
    matrices: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        j = self.subblock_bits
        a = tuple(int(x) for x in self.parity)
        object.__setattr__(self, "parity", a)
        if j < 1 or not a:
            raise ConfigError("profile needs J >= 1 and at least one sub-slot")
        if a[0] != 0:
            raise ConfigError("the first sub-block carries no parity")
        if any(not 0 <= x <= j for x in a):
            raise ConfigError(f"parity lengths must lie in [0, {j}]")
        gen = rngmod.stream(self.seed, "tree-parity")
        mats, seen = [], 0
        for x in a:
            mats.append(gen.integers(0, 2, size=(x, seen), dtype=np.uint8))
            seen += j - x
        object.__setattr__(self, "matrices", tuple(mats))

    @property
    def subslots(self) -> int:
        return len(self.parity)

    @property
    def data_bits(self) -> int:
        return sum(self.subblock_bits - x for x in self.parity)


def build_profile(message_bits: int, subblock_bits: int, subslots: int,
                  seed: int = 0, tail: int = 3) -> TreeCodeProfile:
    """Profile with no parity in slot 1, ``tail`` all-parity slots at the end,
    and the remaining data spread as evenly as possible over the middle slots
    (earlier slots take the extra bit)."""
    j = subblock_bits
    if message_bits < j:
        raise ConfigError("message shorter than one sub-block")
    middle = subslots - 1 - tail
    rest = message_bits - j
    if middle < 0 or (middle == 0 and rest) or rest > middle * j:
        raise ConfigError(f"{subslots} sub-slots cannot carry {message_bits} bits with {tail} parity tail slots")
    data = [j]
    if middle:
        q, r = divmod(rest, middle)
        data += [q + 1 if i < r else q for i in range(middle)]
    data += [0] * tail
    return TreeCodeProfile(j, tuple(j - d for d in data), seed)


def _parity(profile: TreeCodeProfile, level: int, data: np.ndarray) -> np.ndarray:
    g = profile.matrices[level]
    if g.shape[0] == 0:
        return np.zeros(0, dtype=np.uint8)
    return (g.astype(np.int64) @ data[: g.shape[1]].astype(np.int64) % 2).astype(np.uint8)


def tree_encode(message, profile: TreeCodeProfile) -> tuple[int, ...]:
    """1-based sub-block integers for ``message`` (length ``profile.data_bits``)."""
    bits = np.asarray(message, dtype=np.uint8).ravel()
    if bits.size != profile.data_bits:
        raise ConfigError(f"message has {bits.size} bits, profile carries {profile.data_bits}")
    j = profile.subblock_bits
    out, pos = [], 0
    for level, a in enumerate(profile.parity):
        d = j - a
        block = np.concatenate([bits[pos:pos + d], _parity(profile, level, bits)])
        pos += d
        out.append(map_subblock(block))
    return tuple(out)


@dataclass
class TreeDecodeResult:
    messages: list[np.ndarray]
    paths: list[tuple[int, ...]]
    parity_checks: int


def tree_decode(lists, profile: TreeCodeProfile) -> TreeDecodeResult:
    """All parity-consistent paths through the per-sub-slot candidate lists.

    ``lists[l]`` holds 1-based sub-block integers. ``parity_checks`` counts
    candidate extensions tested (slots 2..L).
    """
    lists = [list(map(int, x)) for x in lists]
    if len(lists) != profile.subslots:
        raise ConfigError("one candidate list per sub-slot is required")
    j = profile.subblock_bits
    split = []
    for level, cand in enumerate(lists):
        d = j - profile.parity[level]
        split.append([(i, unmap_index(i, j)[:d], unmap_index(i, j)[d:]) for i in cand])
    messages, paths = [], []
    checks = 0
    stack = [(1, (i,), data) for i, data, _ in reversed(split[0])]
    while stack:
        level, path, data = stack.pop()
        if level == profile.subslots:
            messages.append(data)
            paths.append(path)
            continue
        ext = []
        for i, d, par in split[level]:
            checks += 1
            if np.array_equal(_parity(profile, level, data), par):
                ext.append((level + 1, path + (i,), np.concatenate([data, d])))
        stack.extend(reversed(ext))
    return TreeDecodeResult(messages, paths, checks)


def energy_detect(signal: np.ndarray, codebook, count: int) -> np.ndarray:
    """Columns of the ``count`` largest ``||c_j^H Y||^2``, ascending.

    Ties go to the lower column.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    c = getattr(codebook, "matrix", codebook)
    energy = np.sum(np.abs(c.conj().T @ signal) ** 2, axis=1)
    order = np.argsort(-energy, kind="stable")[:count]
    return np.sort(order)


def coupled_decode(signals, codebook, profile: TreeCodeProfile, count: int):
    """Energy detection per sub-slot, then tree decoding.

    Returns ``(messages, detected, tree)`` with ``detected[l]`` the 0-based
    columns kept in sub-slot ``l``.
    """
    detected = [energy_detect(y, codebook, count) for y in signals]
    tree = tree_decode([d + 1 for d in detected], profile)
    seen, messages = set(), []
    for bits in tree.messages:
        key = bits.tobytes()
        if key not in seen:
            seen.add(key)
            messages.append(Message(bits, tuple(tree_encode(bits, profile))))
    return messages, detected, tree
