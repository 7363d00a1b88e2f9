"""Reproducible random streams built on the Philox counter-based generator.

Philox output is a pure function of (key, counter), so handing every
logical stream its own key makes results independent of how work is split
across workers: stream ``(seed, index)`` always produces the same values,
on any platform, in any execution order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream"]

_MASK64 = (1 << 64) - 1


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for logical stream ``index`` of ``seed``.

    Distinct ``(seed, index)`` pairs yield statistically independent
    streams; identical pairs yield identical output.  Both values are
    taken modulo 2**64 (they form the 128-bit Philox key).
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    if index < 0:
        raise ValueError(f"stream index must be non-negative, got {index}")
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
