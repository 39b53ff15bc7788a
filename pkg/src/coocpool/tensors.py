"""Activation tensors, binary masks, descriptors, and their file format.

An activation tensor is a dense (M, N, D) float array: M rows, N columns,
D channels, channel index varying fastest in memory and on disk.  A spatial
window therefore addresses a contiguous slab of all channels, which is the
access pattern of the co-occurrence convolution.

On disk the format is "COOCT": bytes 0-3 ASCII ``COOC``, byte 4 version
``0x01``, three little-endian u32 fields M, N, D, then M*N*D IEEE-754 f32
little-endian values in row-major, channel-fastest order.  No trailing
bytes.  In memory arrays are float64; f32 -> f64 -> f32 round-trips are
bit-exact.
"""

import warnings
from pathlib import Path

import numpy as np

from . import _binio
from .errors import DegenerateDescriptorWarning, DimensionError, DomainError, ValidationError

MAGIC = b"COOC"
VERSION = 1


def load_tensor(path) -> np.ndarray:
    """Read a COOCT file into an (M, N, D) float64 array."""
    path = Path(path)
    buf = path.read_bytes()
    offset = _binio.read_header(buf, MAGIC, VERSION, path)
    m, offset = _binio.read_u32(buf, offset, path)
    n, offset = _binio.read_u32(buf, offset, path)
    d, offset = _binio.read_u32(buf, offset, path)
    if m < 1 or n < 1 or d < 1:
        raise ValidationError(f"{path}: non-positive dimension in header ({m}, {n}, {d})")
    values, offset = _binio.read_f32_payload(buf, offset, m * n * d, path)
    _binio.expect_eof(buf, offset, path)
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{path}: payload contains NaN or Inf")
    return values.astype(np.float64).reshape(m, n, d)


def save_tensor(tensor: np.ndarray, path) -> None:
    """Write an (M, N, D) array as a COOCT file; ``load_tensor`` inverts it."""
    tensor = np.asarray(tensor)
    if tensor.ndim != 3:
        raise DimensionError(f"expected a 3-D tensor, got shape {tensor.shape}")
    m, n, d = tensor.shape
    header = _binio.HEADER.pack(MAGIC, VERSION) + b"".join(
        _binio.U32.pack(x) for x in (m, n, d)
    )
    try:
        Path(path).write_bytes(header + _binio.pack_f32(tensor.reshape(-1)))
    except OSError as exc:
        raise OSError(f"cannot write tensor to {path}: {exc}") from exc


def mean_activation(tensor: np.ndarray) -> float:
    """Mean over every entry; the default co-occurrence threshold."""
    return float(np.mean(tensor))


def threshold_mask(tensor: np.ndarray, thr: float) -> np.ndarray:
    """Binary mask of entries strictly greater than ``thr`` (same shape, {0, 1})."""
    if not np.isfinite(thr):
        raise DomainError(f"threshold must be finite, got {thr}")
    return (np.asarray(tensor) > thr).astype(np.float64)


def apply_mask(tensor: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Elementwise product of a tensor with a same-shaped binary mask."""
    tensor = np.asarray(tensor)
    mask = np.asarray(mask)
    if tensor.shape != mask.shape:
        raise DimensionError(f"tensor shape {tensor.shape} != mask shape {mask.shape}")
    return tensor * mask


def l2norm(vector: np.ndarray) -> np.ndarray:
    """Scale a descriptor to unit Euclidean norm.

    The zero vector is returned unchanged with a
    :class:`DegenerateDescriptorWarning`: an image whose activations all
    fall below threshold is legal input, not an error.
    """
    vector = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        warnings.warn(
            "l2norm of a zero vector; returning it unchanged",
            DegenerateDescriptorWarning,
            stacklevel=2,
        )
        return vector.copy()
    return vector / norm
