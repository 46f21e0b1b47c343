"""Counter-based random streams.

Every draw is a pure function of (seed, particle id, step, domain), computed
with Philox4x32-10. A particle's noise therefore does not depend on N, on
its position in the array, or on how work is split between threads.
"""

import numpy as np

from ._backend import core

NOISE = 0
INITIAL = 1
AUX = 2

# step counters reserved for initial-condition sampling
_INIT_GAUSS = 0
_INIT_PICK = 1


def normals(seed, ids, step, d, domain=NOISE):
    """Standard normal array of shape (len(ids), d)."""
    return core.normals(int(seed), np.asarray(ids, dtype=np.int64), int(step), int(d), int(domain))


def uniforms(seed, ids, step, d, domain=NOISE):
    """Uniform (0, 1) array of shape (len(ids), d)."""
    return core.uniforms(int(seed), np.asarray(ids, dtype=np.int64), int(step), int(d), int(domain))


def derive_seed(seed, *tags):
    """Deterministic 64-bit child seed (for replicates, references, projections).

    Tags are non-negative integers; more than three are folded in groups.
    """
    for t in tags:
        if not isinstance(t, (int, np.integer)) or t < 0:
            raise TypeError(f"seed tags must be non-negative integers, got {t!r}")
    seed = int(seed)
    rest = list(tags)
    while True:
        head, rest = rest[:3], rest[3:]
        words = np.array([seed & 0xFFFFFFFF] + [int(t) & 0xFFFFFFFF for t in head], dtype=np.uint64)
        words = np.pad(words, (0, 4 - len(words)))
        hi = (seed >> 32) & 0xFFFFFFFF
        c0, c1, c2, c3 = core.philox4x32(words[:1], words[1:2], words[2:3], words[3:4], 0x5EED5EED, hi)
        seed = (int(c0[0]) << 32) | int(c1[0])
        if not rest:
            return seed


def generator(seed, *tags):
    """numpy Generator for auxiliary draws that are not per-particle."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *tags)))
