"""Deterministic random number generation.

Every randomized operation in the package draws from an :class:`Rng`.  The
generator is pinned to numpy's PCG64 seeded through ``SeedSequence`` so that
an identical ``(seed, key path)`` yields an identical stream on every
platform.  Substreams are derived with :meth:`Rng.spawn`, which appends
integers to the key path; parallel call chains must each own their spawned
Rng and never share one instance.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """A seeded PCG64 generator with deterministic substream derivation."""

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self.gen = np.random.Generator(np.random.PCG64(seq))

    def spawn(self, *subkeys: int) -> "Rng":
        """Derive an independent substream for (seed, *key, *subkeys)."""
        return Rng(self.seed, self.key + tuple(int(k) for k in subkeys))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key})"


def derive_seed(seed: int, *key: int) -> int:
    """Collapse (seed, key path) into a single 64-bit seed value."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(seq.generate_state(2, np.uint32).view(np.uint64)[0])
