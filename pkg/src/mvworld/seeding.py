"""Deterministic seed derivation.

Every random decision in the project flows from one root seed per command.
Consumers get child seeds via `derive`, which mixes the root with a string
tag and optional integer indices through numpy's SeedSequence. The mixing is
stable across processes and platforms, so identical (seed, tag, indices)
always yields the identical child seed.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64


def derive(root_seed: int, tag: str, *indices: int) -> int:
    """Derive a child seed from a root seed, a tag and optional indices."""
    tag_words = [b for b in tag.encode("utf-8")]
    ss = np.random.SeedSequence([int(root_seed) & 0xFFFFFFFFFFFFFFFF, *tag_words, *[int(i) for i in indices]])
    return int(ss.generate_state(1, dtype=_U64)[0])


def np_rng(root_seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Numpy generator seeded from a derived child seed."""
    return np.random.Generator(np.random.PCG64(derive(root_seed, tag, *indices)))
