"""Deterministic derivation of independent random streams from one master seed."""
from __future__ import annotations

import hashlib

import numpy as np


def _tag_entropy(tag: object) -> int:
    digest = hashlib.sha256(repr(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def sub_seed(master_seed: int, *tags: object) -> np.random.SeedSequence:
    """Stable seed sequence for a named sub-stream of the master seed."""
    return np.random.SeedSequence([int(master_seed)] + [_tag_entropy(t) for t in tags])


def sub_rng(master_seed: int, *tags: object) -> np.random.Generator:
    """Generator for a named sub-stream; same (seed, tags) -> same stream."""
    return np.random.default_rng(sub_seed(master_seed, *tags))
