"""Deterministic seed derivation.

Every random draw in the package flows from an explicit integer root seed.
Component streams are derived as ``SeedSequence([root, *path])`` where the
path is a fixed tuple of small integers documented at the call site (e.g.
(split, class, sample) for dataset generation). This mixing is stable
across platforms and releases of numpy's PCG64.
"""

import numpy as np

# stream tags, fixed forever
STREAM_DATASET = 0
STREAM_RESERVOIR = 1
STREAM_RFF = 2
STREAM_CORRUPTION = 3
STREAM_FOLDS = 4
STREAM_MC = 5
STREAM_RUNS = 6


def seed_sequence(root, *path) -> np.random.SeedSequence:
    if isinstance(root, np.random.SeedSequence):
        if path:
            return np.random.SeedSequence(
                entropy=root.entropy, spawn_key=tuple(root.spawn_key) + tuple(path)
            )
        return root
    return np.random.SeedSequence([int(root), *map(int, path)])


def derive_rng(root, *path) -> np.random.Generator:
    """Generator for the derived stream (PCG64)."""
    return np.random.default_rng(seed_sequence(root, *path))
