"""Deterministic derivation of independent random streams from one root seed."""

from __future__ import annotations

import numpy as np


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, key).

    Streams with different keys are statistically independent, and the
    mapping is stable across processes and platforms.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def derive_seed(seed: int, *key: int) -> int:
    """Collapse (seed, key) into a plain integer seed for APIs that take one."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    state = ss.generate_state(2, dtype=np.uint64)
    return int(state[0]) ^ (int(state[1]) << 64)
