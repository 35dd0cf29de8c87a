"""Splittable seed derivation.

A master seed plus a path of labels (strings or ints) deterministically names an
independent random stream, so e.g. changing the evaluation protocol never
perturbs training draws.  Labels are folded to uint32 words via SHA-256 and fed
to numpy's SeedSequence as a spawn key.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_word(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"seed path labels must be non-negative, got {label}")
        return int(label) & 0xFFFFFFFF
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def derive_seedseq(master_seed: int, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=tuple(_label_word(p) for p in path)
    )


def derive_rng(master_seed: int, *path) -> np.random.Generator:
    """Independent PCG64 stream for (master_seed, path)."""
    return np.random.Generator(np.random.PCG64(derive_seedseq(master_seed, *path)))
