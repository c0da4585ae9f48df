"""Deterministic RNG derivation.

Every run owns a single root seed; subsystems get independent generators
derived from (root, label...) so adding a consumer never shifts the streams
of existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label) -> int:
    if isinstance(label, int):
        return label & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def derive_rng(root_seed: int, *labels) -> np.random.Generator:
    """Generator seeded by the root seed and a stable label path."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF] + [_label_key(l) for l in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(root_seed: int, *labels) -> int:
    """A plain integer sub-seed, for APIs that take seeds rather than generators."""
    return int(derive_rng(root_seed, *labels).integers(0, 2**63 - 1))
