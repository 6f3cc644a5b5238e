"""Deterministic seed derivation.

Every random draw in the package comes from a Generator built here, keyed by
a root seed plus a path of string/int parts. Streams are therefore stable
across runs, platforms, and process counts.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    """Hash a path of parts into a 64-bit seed."""
    key = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(*parts: object) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
