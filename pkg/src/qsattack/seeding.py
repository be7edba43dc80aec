"""Deterministic per-stage seed derivation.

Every randomized stage of an experiment gets its own seed derived as
``sha256(repr((master, part, part, ...)))`` reduced to 63 bits.  Recording
the master seed, the run index and the stage name is therefore enough to
reproduce any single run out of a sweep.
"""

import hashlib


def derive_seed(master: int, *parts) -> int:
    """Derive a child seed from a master seed and any hashable name parts."""
    text = repr((int(master),) + tuple(parts))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)
