"""Writer for the COOCT tensor container consumed by the pooling pipeline.

Format: bytes 0-3 ASCII ``COOC``, byte 4 version 0x01, u32 little-endian
M, N, D, then M*N*D IEEE-754 f32 little-endian values in row-major,
channel-fastest order, no trailing bytes.  This module is deliberately
standalone: the extractor couples to the downstream library only through
this file format.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"COOC"
VERSION = 1


def write_cooct(tensor: np.ndarray, path) -> None:
    """Write an (M, N, D) float array as a COOCT file."""
    tensor = np.asarray(tensor)
    if tensor.ndim != 3:
        raise ValueError(f"expected an (M, N, D) tensor, got shape {tensor.shape}")
    m, n, d = tensor.shape
    header = struct.pack("<4sBIII", MAGIC, VERSION, m, n, d)
    payload = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)
