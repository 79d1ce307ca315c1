"""Counter-mode PRNG over the active digest.

Protocol-level randomness (truehash rotation, election draws, gossip
matrices) must be recomputable bit-for-bit by every honest node from chain
data alone, so it is derived here from a seed digest instead of from
``random.Random``.
"""

from __future__ import annotations

import struct

from .encoding import digest

_U64 = struct.Struct(">Q")


class HashRNG:
    def __init__(self, seed: bytes, label: bytes = b""):
        self._key = digest(b"hashrng" + bytes(label) + bytes(seed))
        self._counter = 0
        self._buf = b""

    def _block(self) -> bytes:
        out = digest(self._key + _U64.pack(self._counter))
        self._counter += 1
        return out

    def next_u64(self) -> int:
        if len(self._buf) < 8:
            self._buf += self._block()
        value = _U64.unpack(self._buf[:8])[0]
        self._buf = self._buf[8:]
        return value

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection on 64-bit words."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            value = self.next_u64()
            if value < limit:
                return value % n

    def unit(self) -> float:
        return self.next_u64() / float(1 << 64)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> tuple[int, ...]:
        items = list(range(n))
        self.shuffle(items)
        return tuple(items)
