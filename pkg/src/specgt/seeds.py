"""Deterministic random stream derivation.

Every stochastic routine in the package takes a single integer ``seed`` and
derives its own independent generator from it with
``np.random.SeedSequence([seed, *path])``, where ``path`` is a fixed tuple of
small integers identifying the consumer (one id per subsystem, plus optional
indices such as an epoch number or image index). Two consequences:

* the same seed always reproduces the same bytes, end to end, and
* adding a new consumer never perturbs the streams of existing ones,
  because each stream is keyed by its own path rather than by draw order.

The subsystem ids are frozen constants below; changing them is a
compatibility break for anyone relying on seeded outputs.
"""

from __future__ import annotations

import numpy as np

# Frozen subsystem ids (never renumber).
SCENE_FIELD = 1  # fraction field generation
SCENE_NOISE = 2  # sensor noise when rendering a scene
DATASET_AUGMENT = 3  # patch augmentation draws
DATASET_EPOCH = 4  # balanced epoch resampling
SPLIT_SHUFFLE = 5  # train/validation shuffling inside a fold
NN_INIT = 6  # weight initialisation
NN_DROPOUT = 7  # dropout masks
NN_BATCH_ORDER = 8  # minibatch order within a training epoch
SCENE_INDEX = 9  # per-scene seeds inside a multi-scene pipeline
FOLD = 10  # per-fold seeds inside a cross-validation run


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return a PCG64 generator for the given seed and consumer path.

    Parameters
    ----------
    seed : int
        User-facing seed (any non-negative Python int).
    *path : int
        Fixed identifiers, typically one of the module constants above
        followed by optional indices (fold number, epoch number, ...).
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence([int(seed), *[int(p) for p in path]])
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, *path: int) -> int:
    """Derive an integer sub-seed, for APIs that take a seed, not a stream.

    Used where one user seed has to fan out into many seeded components
    (one scene spec per scene, one training seed per fold) without the
    components' own stream derivations colliding.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence([int(seed), *[int(p) for p in path]])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
