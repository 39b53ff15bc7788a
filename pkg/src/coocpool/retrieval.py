"""Exact nearest-neighbor index over l2-normalized descriptors, plus query expansion.

Rankings are by ascending Euclidean distance, which on the unit sphere
matches descending cosine similarity.  Ties break lexicographically by id
so rankings are reproducible.  Datasets here are small (<= ~10^4 rows), so
search is a dense matrix product.

Persistence ("COOI"): magic, version 1, u32 count and dim, an id table of
u16-length-prefixed UTF-8 strings, then the f32 LE row-major matrix.
"""

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _binio
from .errors import DimensionError, DomainError
from .tensors import l2norm

INDEX_MAGIC = b"COOI"
INDEX_VERSION = 1


@dataclass
class DescriptorIndex:
    ids: list[str]
    matrix: np.ndarray  # (len(ids), dim), rows unit-norm

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def build_index(entries) -> DescriptorIndex:
    """Build an index from (id, descriptor) pairs; rows are l2-normalized."""
    ids = []
    rows = []
    for key, vec in entries:
        ids.append(str(key))
        rows.append(np.asarray(vec, dtype=np.float64).reshape(-1))
    if len(set(ids)) != len(ids):
        dupes = sorted({x for x in ids if ids.count(x) > 1})
        raise DomainError(f"duplicate descriptor ids: {dupes}")
    if not rows:
        return DescriptorIndex(ids=[], matrix=np.zeros((0, 0)))
    dims = {row.shape[0] for row in rows}
    if len(dims) != 1:
        raise DimensionError(f"descriptors have mixed dimensions {sorted(dims)}")
    matrix = np.stack([l2norm(row) for row in rows])
    return DescriptorIndex(ids=ids, matrix=matrix)


def query(index: DescriptorIndex, q: np.ndarray) -> list[tuple[str, float]]:
    """Full ranking of the index by Euclidean distance to ``q`` (ascending,
    ties by id)."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if len(index) == 0:
        return []
    if q.shape[0] != index.dim:
        raise DimensionError(f"query dim {q.shape[0]} != index dim {index.dim}")
    distances = np.linalg.norm(index.matrix - q, axis=1)
    order = sorted(range(len(index)), key=lambda i: (distances[i], index.ids[i]))
    return [(index.ids[i], float(distances[i])) for i in order]


def _top_rows(index: DescriptorIndex, ranked, n: int) -> np.ndarray:
    if n < 1:
        raise DomainError(f"need at least one neighbor, got n={n}")
    if n > len(index):
        warnings.warn(
            f"requested {n} neighbors from an index of {len(index)}; clamping",
            UserWarning,
            stacklevel=3,
        )
        n = len(index)
    row_of = {key: i for i, key in enumerate(index.ids)}
    return index.matrix[[row_of[key] for key, _ in ranked[:n]]]


def average_qe(index: DescriptorIndex, q: np.ndarray, ranked, n: int = 10) -> np.ndarray:
    """Average query expansion: mean of the query and its top-n neighbors,
    re-normalized.  Re-query with the result."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    rows = _top_rows(index, ranked, n)
    return l2norm((q + rows.sum(axis=0)) / (rows.shape[0] + 1))


def alpha_qe(
    index: DescriptorIndex, q: np.ndarray, ranked, n: int = 50, alpha: float = 3.0
) -> np.ndarray:
    """Similarity-weighted query expansion: neighbors weigh sim^alpha, with
    negative similarities clamped to zero before exponentiation."""
    if alpha < 0:
        raise DomainError(f"alpha must be nonnegative, got {alpha}")
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    rows = _top_rows(index, ranked, n)
    sims = np.clip(rows @ q, 0.0, None)
    return l2norm(q + (sims**alpha) @ rows)


def save_index(index: DescriptorIndex, path) -> None:
    parts = [_binio.HEADER.pack(INDEX_MAGIC, INDEX_VERSION)]
    parts.append(struct.pack("<II", len(index), index.dim))
    for key in index.ids:
        encoded = key.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise DomainError(f"id too long for the index format: {key[:32]}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
    parts.append(_binio.pack_f32(index.matrix.reshape(-1)))
    Path(path).write_bytes(b"".join(parts))


def load_index(path) -> DescriptorIndex:
    path = Path(path)
    buf = path.read_bytes()
    offset = _binio.read_header(buf, INDEX_MAGIC, INDEX_VERSION, path)
    count, offset = _binio.read_u32(buf, offset, path)
    dim, offset = _binio.read_u32(buf, offset, path)
    ids = []
    for _ in range(count):
        if len(buf) < offset + 2:
            raise _truncated(path)
        (length,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        if len(buf) < offset + length:
            raise _truncated(path)
        ids.append(buf[offset : offset + length].decode("utf-8"))
        offset += length
    values, offset = _binio.read_f32_payload(buf, offset, count * dim, path)
    _binio.expect_eof(buf, offset, path)
    return DescriptorIndex(ids=ids, matrix=values.astype(np.float64).reshape(count, dim))


def _truncated(path):
    from .errors import FileCorruptionError

    return FileCorruptionError(f"{path}: truncated id table")
