"""Deterministic random-stream derivation.

All randomness in the package flows from one integer seed through named
sub-streams, so that e.g. the fitting perturbation stream is unaffected
by a change in the number of simulation samples.  Stream names are mapped
to stable integers via crc32, and child seeds come from SeedSequence, so
derivations are reproducible across platforms and numpy versions.
"""

import zlib

import numpy as np


def _as_int(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def derive(seed: int, *path) -> int:
    """Derive a child seed from ``seed`` and a path of names/indices."""
    ss = np.random.SeedSequence((int(seed),) + tuple(_as_int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


def generator(seed: int, *path) -> np.random.Generator:
    """PCG64 generator for the sub-stream at ``path`` under ``seed``."""
    if path:
        seed = derive(seed, *path)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
