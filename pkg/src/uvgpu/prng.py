"""SplitMix64: the single PRNG used for input generation and scheduling.

Chosen because the whole state is one 64-bit word, the stream for a given
seed is trivially reproducible from any index, and the mixer vectorizes.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """Sequential generator; next_u64 advances the state by one step."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        return _mix(self.state)

    def next_below(self, n: int) -> int:
        # modulo bias is irrelevant at the n used here (wave counts, lane counts)
        return self.next_u64() % n


def stream_u64(seed: int, n: int) -> np.ndarray:
    """First n outputs of SplitMix64(seed), as one vectorized batch.

    Bit-identical to calling next_u64() n times.
    """
    idx = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK) + np.uint64(_GOLDEN) * idx
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
    return z
