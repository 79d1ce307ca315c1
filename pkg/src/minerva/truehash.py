"""Rotating mining hash: digest of a header vector permuted by a group element.

The group is the symmetric group on ``group_degree`` symbols acting on
coordinates of a padded header vector. The element in force changes every
``epoch_length`` snail blocks; the new element is a seeded shuffle keyed on
the hashes of the epoch that just closed, so any node holding the chain can
recompute it.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Sequence

from .encoding import digest
from .prng import HashRNG

DEFAULT_DEGREE = 16
DEFAULT_EPOCH = 20

_U64 = struct.Struct(">Q")


class WrongEpochBoundary(Exception):
    pass


def identity(n: int) -> tuple[int, ...]:
    return tuple(range(n))


@dataclass(frozen=True)
class TruehashParams:
    group_degree: int = DEFAULT_DEGREE
    epoch_length: int = DEFAULT_EPOCH
    current_element: tuple = field(default=None)

    def __post_init__(self):
        if self.current_element is None:
            object.__setattr__(self, "current_element", identity(self.group_degree))
        element = tuple(self.current_element)
        object.__setattr__(self, "current_element", element)
        if self.group_degree < 1:
            raise ValueError("group_degree must be >= 1")
        if self.epoch_length < 1:
            raise ValueError("epoch_length must be >= 1")
        if sorted(element) != list(range(self.group_degree)):
            raise ValueError("current_element must be a permutation of 0..n-1")


@dataclass(frozen=True)
class HeaderVector:
    v: tuple

    def __len__(self):
        return len(self.v)


def pad_header(header: bytes, nonce: int, n: int = DEFAULT_DEGREE) -> HeaderVector:
    """Expand (header, nonce) into n 64-bit field elements."""
    stream = hashlib.shake_256(b"truehash-pad" + _U64.pack(nonce) + bytes(header)).digest(8 * n)
    return HeaderVector(struct.unpack(f">{n}Q", stream))


def act(g: Sequence[int], v: Sequence[int]) -> tuple:
    """Coordinate permutation: the entry at position i moves to position g[i]."""
    out = [0] * len(v)
    for i, value in enumerate(v):
        out[g[i]] = value
    return tuple(out)


def compose(outer: Sequence[int], inner: Sequence[int]) -> tuple:
    """(outer o inner)[i] = outer[inner[i]]."""
    return tuple(outer[i] for i in inner)


def vector_digest(v: Sequence[int]) -> bytes:
    return digest(b"truehash" + struct.pack(f">{len(v)}Q", *v))


def truehash(params: TruehashParams, header: bytes, nonce: int) -> bytes:
    v = pad_header(header, nonce, params.group_degree)
    return vector_digest(act(params.current_element, v.v))


def mix_digest(params: TruehashParams, header: bytes, nonce: int) -> bytes:
    """Digest of the unpermuted vector, carried in block headers for audit."""
    return vector_digest(pad_header(header, nonce, params.group_degree).v)


def epoch_seed(history: Sequence[bytes]) -> bytes:
    return digest(b"truehash-epoch" + b"".join(bytes(h) for h in history))


def rotate_element(history: Sequence[bytes], params: TruehashParams, height: int) -> TruehashParams:
    """New element for the epoch starting at ``height``.

    ``history`` holds the hashes of the ``epoch_length`` blocks ending at
    ``height``. Raises WrongEpochBoundary when called off-schedule.
    """
    E = params.epoch_length
    if height <= 0 or height % E:
        raise WrongEpochBoundary(f"height {height} is not a positive multiple of {E}")
    if len(history) != E:
        raise WrongEpochBoundary(f"need the last {E} block hashes, got {len(history)}")
    rng = HashRNG(epoch_seed(history), b"truehash")
    element = rng.permutation(params.group_degree)
    return TruehashParams(params.group_degree, E, element)


def rotation_heights(params: TruehashParams, up_to: int) -> list[int]:
    return list(range(params.epoch_length, up_to + 1, params.epoch_length))


def prefix64(h: bytes) -> int:
    return _U64.unpack(h[:8])[0]


def suffix64(h: bytes) -> int:
    return _U64.unpack(h[-8:])[0]
