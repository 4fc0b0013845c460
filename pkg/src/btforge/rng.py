"""Named, reproducible random streams.

Every consumer of randomness asks for a stream keyed by a master seed plus a
path of names (``stream(seed, "round", 3, "agent", 1)``).  The key is hashed
into a 64-bit seed, so a stream depends only on its key and never on how many
draws other streams have made or in which order work was scheduled.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(seed: int, *names: object) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for name in names:
        h.update(b"\x1f")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *names: object) -> random.Random:
    return random.Random(derive_seed(seed, *names))
