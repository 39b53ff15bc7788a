"""Co-occurrence filters and the three ways to compute the co-occurrence tensor.

A co-occurrence happens when two activations in *different* channels both
exceed a threshold within a square spatial window of radius r.  The
co-occurrence tensor accumulates, per location and channel, the neighbour
activations taking part in such events, divided by D-1.

Three routes are provided:

* :func:`cooc_conv` - the production path: threshold, mask, convolve with a
  D x D x S x S filter whose channel diagonal is suppressed, re-mask.
* :func:`cooc_bruteforce` - the definition evaluated window by window; the
  correctness oracle for ``cooc_conv`` with the canonical diag-0 filter.
* :func:`shih_cooc_tensor` - the max-correlation baseline: per channel pair,
  pick the offset with maximal correlation and aggregate the winning
  correlation maps back to D channels.
"""

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _binio
from .errors import DimensionError, DomainError
from .tensors import apply_mask, threshold_mask

FILTER_MAGIC = b"COOF"
FILTER_VERSION = 1

# Trainable filters start the channel diagonal here instead of exactly zero.
TRAINABLE_DIAG = 1e-10


@dataclass
class CoocFilter:
    """D x D x S x S convolution kernel; S = 2r + 1.

    ``weights[a, b, u, v]`` couples output channel ``a`` with input channel
    ``b`` at window offset ``(u - r, v - r)``.
    """

    weights: np.ndarray
    radius: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 4 or self.weights.shape[0] != self.weights.shape[1]:
            raise DimensionError(f"filter weights must be (D, D, S, S), got {self.weights.shape}")
        s = 2 * self.radius + 1
        if self.weights.shape[2:] != (s, s):
            raise DimensionError(
                f"window {self.weights.shape[2:]} inconsistent with radius {self.radius}"
            )

    @property
    def depth(self) -> int:
        return self.weights.shape[0]

    @property
    def window(self) -> int:
        return 2 * self.radius + 1

    @cached_property
    def spatially_uniform(self) -> bool:
        """True when every channel pair uses one constant across the window."""
        w = self.weights
        return bool(np.all(w == w[:, :, :1, :1]))


def make_filter(depth: int, radius: int, diag_value: float = 0.0) -> CoocFilter:
    """Canonical co-occurrence filter: off-diagonal 1, channel diagonal ``diag_value``.

    ``diag_value=0`` is the reference filter; ``diag_value=TRAINABLE_DIAG``
    is the training initialization.
    """
    if depth < 2:
        raise DomainError(f"co-occurrence needs at least 2 channels, got depth {depth}")
    if radius < 0:
        raise DomainError(f"radius must be nonnegative, got {radius}")
    s = 2 * radius + 1
    weights = np.ones((depth, depth, s, s), dtype=np.float64)
    idx = np.arange(depth)
    weights[idx, idx, :, :] = diag_value
    return CoocFilter(weights, radius)


def save_filter(f: CoocFilter, path) -> None:
    """Write a filter as COOF: magic, version 1, u32 D and S, f32 LE weights."""
    header = _binio.HEADER.pack(FILTER_MAGIC, FILTER_VERSION)
    header += struct.pack("<II", f.depth, f.window)
    Path(path).write_bytes(header + _binio.pack_f32(f.weights.reshape(-1)))


def load_filter(path) -> CoocFilter:
    path = Path(path)
    buf = path.read_bytes()
    offset = _binio.read_header(buf, FILTER_MAGIC, FILTER_VERSION, path)
    depth, offset = _binio.read_u32(buf, offset, path)
    window, offset = _binio.read_u32(buf, offset, path)
    if window < 1 or window % 2 == 0:
        raise DomainError(f"{path}: window size must be odd and positive, got {window}")
    values, offset = _binio.read_f32_payload(buf, offset, depth * depth * window * window, path)
    _binio.expect_eof(buf, offset, path)
    weights = values.astype(np.float64).reshape(depth, depth, window, window)
    return CoocFilter(weights, (window - 1) // 2)


def _windowed_channel_sums(tensor: np.ndarray, radius: int) -> np.ndarray:
    """Per-channel sum over the (2r+1)^2 window around each location, clipped
    at the borders (equivalent to zero padding)."""
    m, n, d = tensor.shape
    integral = np.zeros((m + 1, n + 1, d))
    integral[1:, 1:] = tensor.cumsum(axis=0).cumsum(axis=1)
    lo_r = np.clip(np.arange(m) - radius, 0, m)
    hi_r = np.clip(np.arange(m) + radius + 1, 0, m)
    lo_c = np.clip(np.arange(n) - radius, 0, n)
    hi_c = np.clip(np.arange(n) + radius + 1, 0, n)
    return (
        integral[hi_r[:, None], hi_c[None, :]]
        - integral[lo_r[:, None], hi_c[None, :]]
        - integral[hi_r[:, None], lo_c[None, :]]
        + integral[lo_r[:, None], lo_c[None, :]]
    )


def _conv2d_direct(tensor: np.ndarray, f: CoocFilter) -> np.ndarray:
    """Direct accumulation over the window slab with zero padding of width r."""
    m, n, d = tensor.shape
    r, s = f.radius, f.window
    padded = np.zeros((m + 2 * r, n + 2 * r, d))
    padded[r : r + m, r : r + n] = tensor
    out = np.zeros((m, n, f.depth))
    flat_out = out.reshape(m * n, f.depth)
    for du in range(s):
        for dv in range(s):
            window = np.ascontiguousarray(padded[du : du + m, dv : dv + n]).reshape(m * n, d)
            flat_out += window @ np.ascontiguousarray(f.weights[:, :, du, dv]).T
    return out


def cooc_conv(tensor: np.ndarray, f: CoocFilter, thr: float) -> np.ndarray:
    """Co-occurrence tensor via threshold, mask, convolution, and re-mask.

    Callers usually pass ``thr = mean_activation(tensor)``.  Filters whose
    weights are constant across the window (the canonical case) dispatch to
    a separable box-sum path; the general direct accumulation handles
    trained filters.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 3:
        raise DimensionError(f"expected (M, N, D) tensor, got shape {tensor.shape}")
    if f.depth != tensor.shape[2]:
        raise DimensionError(f"filter depth {f.depth} != tensor depth {tensor.shape[2]}")
    rho = threshold_mask(tensor, thr)
    masked = apply_mask(tensor, rho)
    if f.spatially_uniform:
        m, n, d = masked.shape
        sums = _windowed_channel_sums(masked, f.radius).reshape(m * n, d)
        conv = (sums @ np.ascontiguousarray(f.weights[:, :, 0, 0]).T).reshape(m, n, d)
    else:
        conv = _conv2d_direct(masked, f)
    return conv / (f.depth - 1) * rho


def cooc_bruteforce(tensor: np.ndarray, radius: int, thr: float) -> np.ndarray:
    """Co-occurrence tensor straight from the definition; the oracle path.

    For every location and channel, walk the clipped spatial window and add
    up the above-threshold activations of every *other* channel.  No
    filters, no padding, independent of :func:`cooc_conv`.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    m, n, d = tensor.shape
    if d < 2:
        raise DomainError(f"co-occurrence needs at least 2 channels, got depth {d}")
    surviving = np.where(tensor > thr, tensor, 0.0)
    out = np.zeros_like(tensor)
    for i in range(m):
        u0, u1 = max(0, i - radius), min(m, i + radius + 1)
        for j in range(n):
            v0, v1 = max(0, j - radius), min(n, j + radius + 1)
            slab = surviving[u0:u1, v0:v1]
            slab_total = slab.sum()
            per_channel = slab.sum(axis=(0, 1))
            for k in range(d):
                if tensor[i, j, k] > thr:
                    # exclude the self channel w = k at every offset
                    out[i, j, k] = (slab_total - per_channel[k]) / (d - 1)
    return out


def channel_cooc_vector(cooc: np.ndarray) -> np.ndarray:
    """Spatial sum of the co-occurrence tensor per channel (length D)."""
    return np.asarray(cooc, dtype=np.float64).sum(axis=(0, 1))


def cooc_correlation_matrix(vectors) -> np.ndarray:
    """Pairwise Pearson correlation of per-channel co-occurrence vectors.

    Zero-variance vectors get a zero row/column (unit diagonal) and a
    warning instead of NaNs.
    """
    import warnings

    from .errors import DegenerateDescriptorWarning

    rows = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors]
    if len(rows) < 2:
        raise DomainError(f"need at least 2 vectors, got {len(rows)}")
    dims = {row.shape[0] for row in rows}
    if len(dims) != 1:
        raise DimensionError(f"vectors have mixed lengths {sorted(dims)}")
    stacked = np.stack(rows)
    centered = stacked - stacked.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    degenerate = norms == 0.0
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} vector(s) have zero variance; "
            "their correlations are reported as 0",
            DegenerateDescriptorWarning,
            stacklevel=2,
        )
    safe = np.where(degenerate, 1.0, norms)
    unit = centered / safe[:, None]
    corr = unit @ unit.T
    corr[degenerate, :] = 0.0
    corr[:, degenerate] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr


def full_offset_grid(radius: int) -> list[tuple[int, int]]:
    """All (ox, oy) offsets with |ox|, |oy| <= radius, row-major (oy slow)."""
    return [(ox, oy) for oy in range(-radius, radius + 1) for ox in range(-radius, radius + 1)]


def _shifted(tensor: np.ndarray, ox: int, oy: int) -> np.ndarray:
    """``out[i, j] = tensor[i + oy, j + ox]``, zero where out of range."""
    m, n = tensor.shape[:2]
    out = np.zeros_like(tensor)
    i0, i1 = max(0, -oy), min(m, m - oy)
    j0, j1 = max(0, -ox), min(n, n - ox)
    if i0 < i1 and j0 < j1:
        out[i0:i1, j0:j1] = tensor[i0 + oy : i1 + oy, j0 + ox : j1 + ox]
    return out


def shih_correlation(tensor: np.ndarray, k: int, w: int, offsets) -> float:
    """Maximal correlation between channels k and w over the offset set:
    max_o sum_p a^k_p * a^w_(p+o), out-of-range positions contributing zero."""
    offsets = list(offsets)
    if not offsets:
        raise DomainError("offset set must be nonempty")
    tensor = np.asarray(tensor, dtype=np.float64)
    a, b = tensor[:, :, k], tensor[:, :, w]
    return max(float(np.sum(a * _shifted(b, ox, oy))) for ox, oy in offsets)


def shih_cooc_tensor(tensor: np.ndarray, offsets) -> np.ndarray:
    """Max-correlation co-occurrence baseline reduced back to D channels.

    For each ordered channel pair (k, w), take the offset maximizing the
    correlation (ties: first offset in iteration order), form the winning
    correlation map a^k * shifted(a^w), and sum the maps over w.
    """
    offsets = list(offsets)
    if not offsets:
        raise DomainError("offset set must be nonempty")
    tensor = np.asarray(tensor, dtype=np.float64)
    m, n, d = tensor.shape
    flat = tensor.reshape(m * n, d)

    best = np.full((d, d), -np.inf)
    best_idx = np.zeros((d, d), dtype=np.intp)
    for idx, (ox, oy) in enumerate(offsets):
        corr = flat.T @ _shifted(tensor, ox, oy).reshape(m * n, d)
        improved = corr > best
        best[improved] = corr[improved]
        best_idx[improved] = idx

    # gathered[p, k] = sum_w shifted_by_bestoffset(k, w)(a^w)(p)
    gathered = np.zeros((m * n, d))
    for idx, (ox, oy) in enumerate(offsets):
        winners = best_idx == idx
        if winners.any():
            gathered += _shifted(tensor, ox, oy).reshape(m * n, d) @ winners.T.astype(np.float64)
    return (flat * gathered).reshape(m, n, d)
