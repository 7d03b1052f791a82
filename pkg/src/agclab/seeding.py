"""Deterministic derived seeds for order-independent parallel generation."""

import hashlib

import numpy as np

__all__ = ["subseed"]


def _as_int(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & (2**63 - 1)
    digest = hashlib.sha256(str(part).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def subseed(*parts) -> np.random.SeedSequence:
    """SeedSequence derived from a mixed tuple of ints and strings."""
    return np.random.SeedSequence(entropy=[_as_int(p) for p in parts])
