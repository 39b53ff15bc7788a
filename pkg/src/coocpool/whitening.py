"""Descriptor finishing: PCA whitening fit on an auxiliary set, multiscale fusion.

The whitening convention is l2-normalize, center, project onto the top-k
covariance eigenvectors, divide by sqrt(eigenvalue), l2-normalize again.
Eigenvector signs are fixed so the largest-magnitude coordinate of every
component is positive, making the fit reproducible across BLAS builds.

Serialized as "COOW": magic, version 1, u32 input dim and output dim, then
mean, projection (row-major k x input-dim), and eigenvalues as f32 LE.
"""

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _binio
from .errors import DimensionError, DomainError
from .tensors import l2norm

MODEL_MAGIC = b"COOW"
MODEL_VERSION = 1


@dataclass
class WhiteningModel:
    mean: np.ndarray          # (input_dim,)
    projection: np.ndarray    # (out_dim, input_dim), orthonormal rows
    eigenvalues: np.ndarray   # (out_dim,), positive, descending

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def out_dim(self) -> int:
        return self.eigenvalues.shape[0]


def fit_whitening(descriptors, out_dim: int) -> WhiteningModel:
    """Fit PCA whitening on a stack of same-dimension descriptors.

    Keeps the top ``out_dim`` components by descending eigenvalue.
    Components with eigenvalue below 1e-12 are dropped with a warning, so
    the returned model may have fewer than ``out_dim`` outputs.
    """
    rows = [np.asarray(v, dtype=np.float64).reshape(-1) for v in descriptors]
    if not rows:
        raise DomainError("no descriptors to fit on")
    dims = {row.shape[0] for row in rows}
    if len(dims) != 1:
        raise DimensionError(f"descriptors have mixed dimensions {sorted(dims)}")
    data = np.stack(rows)
    count, input_dim = data.shape
    if out_dim < 1:
        raise DomainError(f"output dimension must be positive, got {out_dim}")
    if out_dim > input_dim:
        raise DomainError(f"output dimension {out_dim} exceeds input dimension {input_dim}")
    if count < out_dim + 1:
        raise DomainError(f"need at least {out_dim + 1} descriptors for {out_dim} components, got {count}")

    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (count - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1][:out_dim]
    eigenvalues = eigenvalues[order]
    components = eigenvectors[:, order].T

    keep = eigenvalues >= 1e-12
    if not keep.all():
        warnings.warn(
            f"dropping {int((~keep).sum())} near-zero-variance component(s); "
            f"output dimension reduced to {int(keep.sum())}",
            UserWarning,
            stacklevel=2,
        )
        eigenvalues = eigenvalues[keep]
        components = components[keep]
    if components.shape[0] == 0:
        raise DomainError("no component has positive variance; cannot whiten")

    # sign convention: largest-magnitude coordinate of each component positive
    pivot = np.argmax(np.abs(components), axis=1)
    flips = np.sign(components[np.arange(components.shape[0]), pivot])
    components = components * flips[:, None]
    return WhiteningModel(mean=mean, projection=components, eigenvalues=eigenvalues)


def apply_whitening(model: WhiteningModel, descriptor: np.ndarray) -> np.ndarray:
    """Center, project, rescale by 1/sqrt(eigenvalue), l2-normalize."""
    descriptor = np.asarray(descriptor, dtype=np.float64).reshape(-1)
    if descriptor.shape[0] != model.input_dim:
        raise DimensionError(
            f"descriptor dim {descriptor.shape[0]} != model input dim {model.input_dim}"
        )
    projected = model.projection @ (descriptor - model.mean)
    return l2norm(projected / np.sqrt(model.eigenvalues))


def multiscale_aggregate(descriptors) -> np.ndarray:
    """Fuse per-scale descriptors: elementwise mean, then l2-normalize."""
    rows = [np.asarray(v, dtype=np.float64).reshape(-1) for v in descriptors]
    if not rows:
        raise DomainError("no descriptors to aggregate")
    dims = {row.shape[0] for row in rows}
    if len(dims) != 1:
        raise DimensionError(f"descriptors have mixed dimensions {sorted(dims)}")
    return l2norm(np.mean(rows, axis=0))


def save_whitening(model: WhiteningModel, path) -> None:
    header = _binio.HEADER.pack(MODEL_MAGIC, MODEL_VERSION)
    header += struct.pack("<II", model.input_dim, model.out_dim)
    payload = (
        _binio.pack_f32(model.mean)
        + _binio.pack_f32(model.projection.reshape(-1))
        + _binio.pack_f32(model.eigenvalues)
    )
    Path(path).write_bytes(header + payload)


def load_whitening(path) -> WhiteningModel:
    path = Path(path)
    buf = path.read_bytes()
    offset = _binio.read_header(buf, MODEL_MAGIC, MODEL_VERSION, path)
    input_dim, offset = _binio.read_u32(buf, offset, path)
    out_dim, offset = _binio.read_u32(buf, offset, path)
    mean, offset = _binio.read_f32_payload(buf, offset, input_dim, path)
    projection, offset = _binio.read_f32_payload(buf, offset, out_dim * input_dim, path)
    eigenvalues, offset = _binio.read_f32_payload(buf, offset, out_dim, path)
    _binio.expect_eof(buf, offset, path)
    return WhiteningModel(
        mean=mean.astype(np.float64),
        projection=projection.astype(np.float64).reshape(out_dim, input_dim),
        eigenvalues=eigenvalues.astype(np.float64),
    )
