"""Counter-based Gaussian streams for reproducible parallel chains.

Draws are a pure function of ``(seed, stream, counter, chain)``. The Philox
key is ``(seed, stream)``; the counter's third word carries the step counter
and its first word the block offset of the chain. Each chain consumes a
fixed number of 64-bit words per step (``width`` rounded up to a multiple of
four) and normals are produced by Box-Muller from exactly one word per
uniform. Consequently chain ``k`` receives the same numbers whether it is
simulated alone, in a block starting at any ``first_chain <= k``, or by any
number of threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi


def _words_per_chain(width: int) -> int:
    return 4 * -(-width // 4)


def counter_normals(seed: int, stream: int, counter: int, n_chains: int, width: int,
                    first_chain: int = 0) -> np.ndarray:
    """Standard normals of shape ``(n_chains, width)`` for one counter value."""
    if width < 1 or n_chains < 1:
        raise ValueError("n_chains and width must be positive")
    wpc = _words_per_chain(width + (width & 1))
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    ctr = np.array([first_chain * wpc // 4, 0, counter & _MASK64, 0], dtype=np.uint64)
    u = Generator(Philox(key=key, counter=ctr)).random(n_chains * wpc).reshape(n_chains, wpc)
    # only the leading word pairs are consumed; the padding words are skipped
    n_pairs = -(-width // 2)
    u1 = 1.0 - u[:, 0 : 2 * n_pairs : 2]  # (0, 1], safe for the log
    u2 = u[:, 1 : 2 * n_pairs : 2]
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = _TWO_PI * u2
    z = np.empty((n_chains, 2 * n_pairs))
    z[:, 0::2] = rad * np.cos(ang)
    z[:, 1::2] = rad * np.sin(ang)
    return z[:, :width]


@dataclass
class NoiseStream:
    """A position in a counter-based stream.

    ``draw`` reads the current counter without advancing; ``next`` reads and
    advances. Two streams with equal ``(seed, stream, counter)`` produce
    identical draws.
    """

    seed: int
    counter: int = 0
    stream: int = 0

    def draw(self, n_chains: int, width: int, first_chain: int = 0, counter: int | None = None) -> np.ndarray:
        c = self.counter if counter is None else counter
        return counter_normals(self.seed, self.stream, c, n_chains, width, first_chain)

    def next(self, n_chains: int, width: int, first_chain: int = 0) -> np.ndarray:
        z = self.draw(n_chains, width, first_chain)
        self.counter += 1
        return z

    def substream(self, stream: int) -> "NoiseStream":
        """Independent stream sharing the seed, e.g. for initial conditions."""
        return NoiseStream(self.seed, 0, stream)

    def generator(self) -> np.random.Generator:
        """A conventional Generator keyed on this stream, for non-step sampling."""
        key = np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)
        ctr = np.array([0, 0, self.counter & _MASK64, 1], dtype=np.uint64)
        return Generator(Philox(key=key, counter=ctr))
