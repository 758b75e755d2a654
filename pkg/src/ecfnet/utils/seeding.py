"""
Named random substreams derived from one root seed
"""
import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name`` under ``seed``.

    The same (seed, name) always yields the same stream, so two model variants
    that both own a parameter called ``cffm.1.attn.q_s.weight`` draw identical
    initial values for it.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, key]))


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """Batch order for one epoch; fixed by (seed, epoch) alone"""
    return substream(seed, f"shuffle:{epoch}").permutation(n)
