"""Deterministic RNG forking.

All randomness in the library flows from a single root seed. Purpose-specific
streams are derived with ``child_rng(root_seed, *labels)``, where string
labels are hashed with crc32 and mixed into a numpy ``SeedSequence``. The
generator algorithm is numpy's default PCG64, so any two implementations of
the same fork labels see identical streams.

Fork labels used across the library:
    "splits"        dataset split sampling
    "subsample"     corpus subsampling
    "init"          parameter initialization
    "rollout"       action sampling during training (plus epoch/batch ints)
    "shuffle"       per-epoch problem ordering
    "baseline"      baseline selectors
    "synthetic"     synthetic environment construction
"""

import zlib

import numpy as np


def _label_to_int(label):
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def child_rng(root_seed, *labels):
    """Return a ``numpy.random.Generator`` forked from the root seed."""
    entropy = [int(root_seed)] + [_label_to_int(l) for l in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))
