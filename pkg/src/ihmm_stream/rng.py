"""Counter-based random streams keyed by (seed, entity).

Every user stream, the barrier step and the simulator draw from their own
Philox generator, so the order in which entities are scheduled never changes
the numbers any one of them sees.
"""

import hashlib

import numpy as np


def entity_key(name):
    """Stable 64-bit integer for an entity name (user id, role tag)."""
    digest = hashlib.blake2b(str(name).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed, *names):
    """Return a Generator for ``seed`` and a path of entity names."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [entity_key(n) for n in names]
    ss = np.random.SeedSequence(words)
    return np.random.Generator(np.random.Philox(ss))


def get_state(rng):
    return rng.bit_generator.state


def set_state(rng, state):
    rng.bit_generator.state = state
    return rng


def from_state(state):
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)
