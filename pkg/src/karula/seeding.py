"""Deterministic named random substreams derived from one master seed."""

import hashlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master_seed: int, *keys) -> np.random.Generator:
    """Generator for the (master_seed, *keys) stream.

    Streams with distinct key tuples are statistically independent, and the
    derivation is stable across platforms, so any stage of a run can be
    re-executed in isolation with identical randomness.
    """
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
