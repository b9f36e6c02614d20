"""Deterministic derivation of named random streams from one master seed.

Every stochastic stage of the simulator (corpus generation, client
sampling, local-training shuffles, noise, attacks) pulls its own stream
derived from the master seed and a label path, so changing e.g. the
attack seed never perturbs training.
"""

import hashlib
import struct

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, *labels) -> int:
    """Derive a 64-bit child seed from ``master`` and a label path.

    Distinct label paths give statistically independent streams; the same
    path always yields the same child.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", master & _MASK64))
    for label in labels:
        part = str(label).encode("utf-8")
        h.update(struct.pack("<I", len(part)))
        h.update(part)
    return int.from_bytes(h.digest(), "little")


def rng_for(master: int, *labels) -> np.random.Generator:
    """A fresh generator for the stream named by ``labels``."""
    return np.random.default_rng(derive_seed(master, *labels))
