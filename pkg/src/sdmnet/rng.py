"""Named, counter-based random streams.

Every stochastic step draws from a generator keyed on
``(global_seed, purpose_tag, *ids)``, so results never depend on the order
in which samples or stages are processed.
"""

import hashlib

import numpy as np


def stream_key(seed, tag, *ids):
    text = "|".join([str(int(seed)), str(tag)] + [str(i) for i in ids])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def stream(seed, tag, *ids):
    """Return a Philox-backed ``numpy.random.Generator`` for the named stream."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, tag, *ids)))
