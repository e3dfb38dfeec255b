"""Seeded random streams with stable names.

All randomness in the package flows through one master seed fanned out
into named substreams, so freezing or replaying one stream (e.g. gumbel
noise during gradient checks) leaves the others untouched.
"""
from __future__ import annotations

import numpy as np

# stable ids; appending is fine, reordering would change all streams
_STREAMS = {
    "init": 0,
    "windows": 1,
    "gumbel": 2,
    "dropout": 3,
    "folds": 4,
    "synth": 5,
    "shuffle": 6,
    "fdcheck": 7,
    "evalgraph": 8,
}


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream name, optional index)."""
    if name not in _STREAMS:
        raise KeyError(f"unknown rng stream '{name}'")
    ss = np.random.SeedSequence([int(seed), _STREAMS[name], int(index)])
    return np.random.default_rng(ss)
