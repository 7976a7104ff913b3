"""Multiplication counts of the three decoding schemes."""

from __future__ import annotations

from typing import Sequence

__all__ = ["tree_search_cost", "complexity_report"]


def tree_search_cost(k: int, parity: Sequence[int]) -> float:
    """Expected parity checks of a tree search rooted at one candidate.

    ``parity`` is ``a_1..a_L``. Level ``n`` holds the true path plus the
    wrong branches that forked at some level ``m <= n`` and survived every
    check since, and each survivor is tested against ``k`` candidates.
    """
    a = list(parity)
    big_l = len(a)
    total = k * (big_l - 1)
    for n in range(2, big_l):
        for m in range(2, n + 1):
            surv = 1.0
            for level in range(m, n + 1):
                surv *= 2.0 ** (-a[level - 1])
            total += k * k ** (n - m) * (k - 1) * surv
    return float(total)


def complexity_report(scheme: str, *, n0: int, antennas: int, subslots: int,
                      active_users: int, iterations: int = 100,
                      subblock_bits: int | None = None,
                      parity: Sequence[int] | None = None) -> float:
    """Multiplication count of ``scheme`` (``integrated``, ``separate`` or ``coupled``).

    The coupled scheme needs ``subblock_bits`` and ``parity`` and runs over
    ``len(parity)`` sub-slots; ``subslots`` is ignored for it.
    """
    m, big_l, k, t = antennas, subslots, active_users, iterations
    if scheme == "integrated":
        return float(n0**2 * m * big_l + t * (big_l - 1) * (n0**2 + k**2))
    if scheme == "separate":
        return float(big_l * (n0**2 * m + t * n0**2 + m * k**3))
    if scheme == "coupled":
        if subblock_bits is None or parity is None:
            raise ValueError("coupled complexity needs subblock_bits and parity")
        lc = len(parity)
        return float(2**subblock_bits * n0 * lc * m**2 + tree_search_cost(k, parity))
    raise ValueError(f"unknown scheme {scheme!r}")
