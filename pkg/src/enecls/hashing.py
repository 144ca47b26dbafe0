"""Deterministic 64-bit FNV-1a hashing.

Every hashed identifier in this package (subword buckets, taxonomy content
hashes) goes through this function so results are bit-stable across runs,
platforms, and implementations.
"""

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes | str) -> int:
    """Hash bytes (or the UTF-8 encoding of a string) to an unsigned 64-bit int."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    value = _FNV_OFFSET
    for byte in data:
        value = ((value ^ byte) * _FNV_PRIME) & _MASK64
    return value
