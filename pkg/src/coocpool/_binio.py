"""Low-level helpers for the little-endian binary container formats.

Every container starts with a 4-byte ASCII magic and a one-byte version,
followed by u32 shape fields and an f32 payload.  Readers reject trailing
bytes so truncation and concatenation bugs surface immediately.
"""

import struct

import numpy as np

from .errors import FileCorruptionError, FileFormatError

HEADER = struct.Struct("<4sB")
U32 = struct.Struct("<I")


def read_header(buf: bytes, magic: bytes, version: int, path) -> int:
    """Validate magic/version at the start of ``buf``; return the offset after them."""
    if len(buf) < HEADER.size:
        raise FileFormatError(f"{path}: file too short for a {magic.decode()} header")
    got_magic, got_version = HEADER.unpack_from(buf, 0)
    if got_magic != magic:
        raise FileFormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if got_version != version:
        raise FileFormatError(f"{path}: unsupported version {got_version}")
    return HEADER.size


def read_u32(buf: bytes, offset: int, path) -> tuple[int, int]:
    if len(buf) < offset + U32.size:
        raise FileCorruptionError(f"{path}: truncated header")
    (value,) = U32.unpack_from(buf, offset)
    return value, offset + U32.size


def read_f32_payload(buf: bytes, offset: int, count: int, path) -> tuple[np.ndarray, int]:
    """Read exactly ``count`` f32 values starting at ``offset``."""
    nbytes = 4 * count
    if len(buf) < offset + nbytes:
        raise FileCorruptionError(
            f"{path}: payload truncated ({len(buf) - offset} bytes, expected {nbytes})"
        )
    values = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    return values, offset + nbytes


def expect_eof(buf: bytes, offset: int, path) -> None:
    if len(buf) != offset:
        raise FileCorruptionError(f"{path}: {len(buf) - offset} trailing bytes")


def pack_f32(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f4").tobytes()
