"""Counter-based seed derivation.

Every random stream is addressed by ``(master_seed, *keys)`` so results do
not depend on generation order or worker count. A tuple seed ``(s, a, b)``
is shorthand for ``seed_sequence(s, a, b)``.
"""

import numpy as np


def seed_sequence(seed, *keys) -> np.random.SeedSequence:
    if isinstance(seed, tuple):
        return seed_sequence(seed[0], *seed[1:], *keys)
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy,
                                      spawn_key=tuple(seed.spawn_key) + tuple(int(k) for k in keys))
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))


def derive_rng(seed, *keys) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *keys))
