"""
Counter-based Gaussian noise streams.

A draw is a pure function of ``(seed, stream_id, counter_base + index)``: the
Philox block at that counter supplies two uniforms, and the cosine half of the
Box-Muller transform turns them into one standard normal variate. Filling a
tensor through any partition of its indices therefore gives the same tensor.

Stream ids: normalization layer ``i`` (0-based) of a model draws from stream
``i + 1``; the noise-robustness harness injecting at layer ``k`` uses
``ROBUSTNESS_STREAM_BASE + k``. Training step ``t`` (and robustness draw ``t``)
starts at counter base ``t << STEP_SHIFT``.
"""
import math
from dataclasses import dataclass, replace

import numpy as np

STEP_SHIFT = 32
ROBUSTNESS_STREAM_BASE = 1 << 32

_UINT64_MASK = (1 << 64) - 1
_TO_UNIT = 2.0 ** -53


@dataclass(frozen=True)
class NoiseStream:
    seed: int
    stream_id: int
    counter_base: int = 0

    def __post_init__(self):
        for name in ('seed', 'stream_id', 'counter_base'):
            value = getattr(self, name)
            if not 0 <= value <= _UINT64_MASK:
                raise ValueError('`{}` should fit in 64 bits, got {}'.format(name, value))

    def at_step(self, step):
        """The same stream, positioned at the counter range reserved for ``step``."""
        return replace(self, counter_base=(int(step) << STEP_SHIFT) & _UINT64_MASK)

    def _block_words(self, start, count):
        """Raw Philox words for counters ``start + 1 ... start + count``, shape ``(count, 4)``."""
        key = self.seed | (self.stream_id << 64)
        bit_generator = np.random.Philox(key=key, counter=start & ((1 << 256) - 1))
        return bit_generator.random_raw(4 * count).reshape(count, 4)

    def gaussians(self, start, count):
        """Standard normal draws for indices ``start ... start + count - 1``."""
        if count == 0:
            return np.empty(0)
        words = self._block_words(self.counter_base + int(start), int(count))
        u1 = ((words[:, 0] >> np.uint64(11)).astype(np.float64) + 0.5) * _TO_UNIT
        u2 = ((words[:, 1] >> np.uint64(11)).astype(np.float64) + 0.5) * _TO_UNIT
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)

    def gaussians_like(self, shape, offset=0):
        """Fill ``shape`` in C order; element ``i`` gets index ``offset + i``."""
        count = int(np.prod(shape, dtype=np.int64))
        return self.gaussians(offset, count).reshape(shape)


def gaussian_at(stream, index):
    return float(stream.gaussians(index, 1)[0])
