"""Named deterministic random streams, all derived from one root seed.

Each consumer (parameter init, batch shuffling, noise injection, majority-vote
tie breaking, synthetic data) gets its own generator so that changing how one
of them draws never perturbs the others.
"""

from __future__ import annotations

import numpy as np

STREAM_IDS = {
    "init": 1,
    "shuffle": 2,
    "noise": 3,
    "mv-ties": 4,
    "synth": 5,
}


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Return the generator for one named stream under ``root_seed``."""
    try:
        key = STREAM_IDS[name]
    except KeyError:
        raise ValueError(f"unknown random stream: {name!r}") from None
    return np.random.default_rng([key, int(root_seed)])
