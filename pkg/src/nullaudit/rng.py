"""Deterministic random-stream derivation.

Every stochastic component draws from a substream derived from a master seed
plus a structured path (experiment name, cell label, replication index, ...).
Substreams are independent by construction, and results are identical no
matter how work is sharded across processes, because each (cell, replication)
owns its stream regardless of which worker runs it.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["child_sequence", "stream", "path_token"]

_MASK32 = 0xFFFFFFFF


def path_token(part: str | int) -> int:
    """Map a path element to a stable 32-bit integer.

    Integers pass through (masked to 32 bits); strings hash via SHA-256 so the
    mapping is stable across processes and Python versions, unlike ``hash``.
    """
    if isinstance(part, bool):
        raise TypeError("bool is ambiguous in a seed path; use int or str")
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK32
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big")
    raise TypeError(f"unsupported seed path element: {part!r}")


def child_sequence(master_seed: int, *path: str | int) -> np.random.SeedSequence:
    """Derive the SeedSequence for one node of the seed tree."""
    key = tuple(path_token(p) for p in path)
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)


def stream(master_seed: int, *path: str | int) -> np.random.Generator:
    """Return a Generator seeded from ``(master_seed, *path)``."""
    return np.random.default_rng(child_sequence(master_seed, *path))
