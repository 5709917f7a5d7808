"""Counter-based random streams.

Every random draw in the simulator and the trial engine comes from a Philox
generator keyed by a tuple such as ``(study_seed, replicate, "patient", i)``.
Streams are independent of consumption order, so comparator arms share the
same patient-level randomness and a reloaded trial replays identically.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _digest(parts: tuple) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return h.digest()


def stream(*parts) -> np.random.Generator:
    """A fresh generator keyed by ``parts``; same parts, same stream."""
    key = np.frombuffer(_digest(parts), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(*parts) -> int:
    """A 63-bit integer seed keyed by ``parts`` (for the jit samplers)."""
    return int(np.frombuffer(_digest(parts), dtype=np.uint64)[0] >> 1)
