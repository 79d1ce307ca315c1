"""Canonical byte encoding and the configurable 256-bit digest.

Every record is encoded as the concatenation of its fields in declaration
order. Each field is written as a 4-byte big-endian length followed by the
field payload:

* ``u64``    - 8-byte big-endian unsigned integer
* ``i64``    - 8-byte big-endian two's-complement integer
* ``bytes``  - raw bytes
* ``digest`` - raw 32 bytes
* ``str``    - UTF-8 bytes
* ``bool``   - one byte, 0x00 or 0x01
* ``(seq, kind)`` - 4-byte big-endian element count, then every element
  encoded as a length-prefixed field of ``kind``
* a record class - the nested record's own encoding

Records opt in by declaring a ``SCHEMA`` class attribute: a tuple of
``(field_name, kind)`` pairs. The same schema drives decoding, so
``decode(cls, encode(x)) == x`` for every schema'd value.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Any, Callable

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)

_HASHERS: dict[str, Callable[[bytes], bytes]] = {
    "sha3_256": lambda data: hashlib.sha3_256(data).digest(),
    "blake2b": lambda data: hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest(),
}
_active = "sha3_256"
_hash_fn = _HASHERS[_active]


def set_hash(name: str) -> None:
    """Select the process-wide digest (``sha3_256`` or ``blake2b``)."""
    global _active, _hash_fn
    if name not in _HASHERS:
        raise ValueError(f"unknown hash {name!r}; choose from {sorted(_HASHERS)}")
    _active = name
    _hash_fn = _HASHERS[name]


def hash_name() -> str:
    return _active


def digest(data: bytes) -> bytes:
    return _hash_fn(data)


def check_digest(value: bytes, field: str = "digest") -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
        raise ValueError(f"{field} must be {DIGEST_SIZE} bytes")
    return bytes(value)


_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_I64 = struct.Struct(">q")


def _payload(kind: Any, value: Any) -> bytes:
    if kind == "u64":
        return _U64.pack(value)
    if kind == "i64":
        return _I64.pack(value)
    if kind in ("bytes", "digest"):
        return bytes(value)
    if kind == "str":
        return value.encode("utf-8")
    if kind == "bool":
        return b"\x01" if value else b"\x00"
    if isinstance(kind, tuple) and kind[0] == "seq":
        inner = kind[1]
        parts = [_U32.pack(len(value))]
        for item in value:
            body = _payload(inner, item)
            parts.append(_U32.pack(len(body)))
            parts.append(body)
        return b"".join(parts)
    if isinstance(kind, type) and hasattr(kind, "SCHEMA"):
        return encode(value)
    raise TypeError(f"unsupported field kind {kind!r}")


def encode_fields(schema, values) -> bytes:
    parts = []
    for (name, kind), value in zip(schema, values):
        body = _payload(kind, value)
        parts.append(_U32.pack(len(body)))
        parts.append(body)
    return b"".join(parts)


def encode(obj: Any) -> bytes:
    schema = type(obj).SCHEMA
    return encode_fields(schema, [getattr(obj, name) for name, _ in schema])


def _read_field(data: bytes, pos: int) -> tuple[bytes, int]:
    if pos + 4 > len(data):
        raise ValueError("truncated encoding")
    (size,) = _U32.unpack_from(data, pos)
    end = pos + 4 + size
    if end > len(data):
        raise ValueError("truncated encoding")
    return data[pos + 4:end], end


def _unpayload(kind: Any, body: bytes) -> Any:
    if kind == "u64":
        return _U64.unpack(body)[0]
    if kind == "i64":
        return _I64.unpack(body)[0]
    if kind == "bytes":
        return body
    if kind == "digest":
        return check_digest(body)
    if kind == "str":
        return body.decode("utf-8")
    if kind == "bool":
        return body == b"\x01"
    if isinstance(kind, tuple) and kind[0] == "seq":
        (count,) = _U32.unpack_from(body, 0)
        pos = 4
        items = []
        for _ in range(count):
            item, pos = _read_field(body, pos)
            items.append(_unpayload(kind[1], item))
        return tuple(items)
    if isinstance(kind, type) and hasattr(kind, "SCHEMA"):
        return decode(kind, body)
    raise TypeError(f"unsupported field kind {kind!r}")


def decode(cls: type, data: bytes) -> Any:
    """Inverse of :func:`encode` for a schema'd record class."""
    pos = 0
    values = {}
    for name, kind in cls.SCHEMA:
        body, pos = _read_field(data, pos)
        values[name] = _unpayload(kind, body)
    if pos != len(data):
        raise ValueError(f"trailing bytes after {cls.__name__}")
    return cls(**values)


def to_jsonable(obj: Any) -> Any:
    """Schema-driven JSON view: digests/bytes as hex, records as dicts."""
    schema = type(obj).SCHEMA
    return {name: _json_value(kind, getattr(obj, name)) for name, kind in schema}


def _json_value(kind: Any, value: Any) -> Any:
    if kind in ("bytes", "digest"):
        return bytes(value).hex()
    if isinstance(kind, tuple) and kind[0] == "seq":
        return [_json_value(kind[1], v) for v in value]
    if isinstance(kind, type) and hasattr(kind, "SCHEMA"):
        return to_jsonable(value)
    return value


def from_jsonable(cls: type, data: dict) -> Any:
    values = {name: _from_json_value(kind, data[name]) for name, kind in cls.SCHEMA}
    return cls(**values)


def _from_json_value(kind: Any, value: Any) -> Any:
    if kind == "bytes":
        return bytes.fromhex(value)
    if kind == "digest":
        return check_digest(bytes.fromhex(value))
    if isinstance(kind, tuple) and kind[0] == "seq":
        return tuple(_from_json_value(kind[1], v) for v in value)
    if isinstance(kind, type) and hasattr(kind, "SCHEMA"):
        return from_jsonable(kind, value)
    return value
