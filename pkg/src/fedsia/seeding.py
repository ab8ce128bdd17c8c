"""Deterministic derivation of independent random streams.

Every consumer of randomness in a run gets its own generator, keyed by the
master seed plus a purpose label and optional round / client counters. The
derivation is pinned bit-exactly so runs can be reproduced from the key
alone, in any language:

    key    = "{master_seed}|{purpose}|{round}|{client}"   (ASCII)
    seed64 = first 8 bytes of SHA-256(key), big-endian unsigned
    stream = numpy PCG64 generator seeded with seed64

Distinct keys give unrelated streams; reusing a key replays a stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, purpose: str, round_index: int = 0, client: int = 0) -> int:
    key = f"{master_seed}|{purpose}|{round_index}|{client}".encode("ascii")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def derive_rng(
    master_seed: int, purpose: str, round_index: int = 0, client: int = 0
) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, purpose, round_index, client))
