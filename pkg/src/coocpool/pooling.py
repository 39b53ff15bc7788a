"""Reduce an activation tensor plus its co-occurrence tensor to a descriptor.

Two families: linear weighted pooling (spatial weights from per-location
co-occurrence mass, channel weights from inverse per-channel mass) and
bilinear pooling of activations against co-occurrences, either exact
(D x D) or compacted to d dimensions by count-sketching both branches and
accumulating their circular convolution over locations.

Sketch hash/sign tables are drawn from a SplitMix64 stream so descriptors
are reproducible from the seed alone: starting from ``seed``, 4*D draws are
taken in the order h1, s1, h2, s2; each h entry is ``draw % d`` and each s
entry is +1 when the draw's least significant bit is 1, else -1.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDescriptorWarning, DimensionError, DomainError

_MASK64 = (1 << 64) - 1


def _splitmix64_stream(seed: int, count: int) -> list[int]:
    state = seed & _MASK64
    out = []
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        out.append(z)
    return out


def spatial_cooc_weights(cooc: np.ndarray, a: float = 2.0, b: float = 2.0) -> np.ndarray:
    """Power-normalized per-location co-occurrence mass (an M x N weight map).

    ``S(i,j)`` sums the co-occurrence tensor over channels; the weight is
    ``(S / ||S||_a)^(1/b)``.  An all-zero map comes back all-zero with a
    warning.
    """
    if a <= 0 or b <= 0:
        raise DomainError(f"power-normalization exponents must be positive, got a={a}, b={b}")
    spatial = np.asarray(cooc, dtype=np.float64).sum(axis=2)
    denom = float(np.sum(spatial**a)) ** (1.0 / a)
    if denom == 0.0:
        warnings.warn(
            "co-occurrence tensor has no mass; spatial weights are all zero",
            DegenerateDescriptorWarning,
            stacklevel=2,
        )
        return np.zeros_like(spatial)
    return (spatial / denom) ** (1.0 / b)


def channel_cooc_weights(vector: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Inverse-frequency channel weights: ``ln(sum(V) / (eps + V_k))``.

    Rare channels get boosted, tf-idf style.  Natural logarithm; a zero
    total returns all zeros with a warning.
    """
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    vector = np.asarray(vector, dtype=np.float64)
    total = float(vector.sum())
    if total == 0.0:
        warnings.warn(
            "channel co-occurrence vector sums to zero; channel weights are all zero",
            DegenerateDescriptorWarning,
            stacklevel=2,
        )
        return np.zeros_like(vector)
    return np.log(total / (eps + vector))


def spatial_mask_topdown(m: int, n: int) -> np.ndarray:
    """Linear top-down ramp: row i weighs (M - i) / M, constant across columns."""
    if m < 1 or n < 1:
        raise DomainError(f"mask dimensions must be positive, got ({m}, {n})")
    ramp = (m - np.arange(m, dtype=np.float64)) / m
    return np.repeat(ramp[:, None], n, axis=1)


def spatial_mask_center(m: int, n: int) -> np.ndarray:
    """Centered Gaussian prior with sigma = min(M, N) / 3."""
    if m < 1 or n < 1:
        raise DomainError(f"mask dimensions must be positive, got ({m}, {n})")
    sigma = min(m, n) / 3.0
    rows = np.arange(m, dtype=np.float64) - (m - 1) / 2.0
    cols = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    return np.exp(-(rows[:, None] ** 2 + cols[None, :] ** 2) / (2.0 * sigma**2))


def masked_tensor(tensor: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Multiply every channel by an M x N spatial mask."""
    tensor = np.asarray(tensor, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != tensor.shape[:2]:
        raise DimensionError(f"mask shape {mask.shape} != spatial shape {tensor.shape[:2]}")
    return tensor * mask[:, :, None]


def linear_weighted_pool(
    tensor: np.ndarray,
    alpha: np.ndarray,
    beta: np.ndarray,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Channel sums of the tensor reweighted spatially (alpha, optional mask)
    and per channel (beta); returns a length-D descriptor, not yet normalized."""
    tensor = np.asarray(tensor, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if alpha.shape != tensor.shape[:2]:
        raise DimensionError(f"alpha shape {alpha.shape} != spatial shape {tensor.shape[:2]}")
    if beta.shape != (tensor.shape[2],):
        raise DimensionError(f"beta shape {beta.shape} != (D,) = ({tensor.shape[2]},)")
    weights = alpha if mask is None else alpha * np.asarray(mask, dtype=np.float64)
    if weights.shape != tensor.shape[:2]:
        raise DimensionError(f"mask shape incompatible with spatial shape {tensor.shape[:2]}")
    return np.einsum("ij,ijk->k", weights, tensor) * beta


def sum_pool(tensor: np.ndarray) -> np.ndarray:
    """Spatial average per channel (the unweighted baseline descriptor)."""
    return np.asarray(tensor, dtype=np.float64).mean(axis=(0, 1))


def bilinear_pool(tensor: np.ndarray, cooc: np.ndarray) -> np.ndarray:
    """Sum over locations of outer products activation x co-occurrence:
    ``B[k, w] = sum_ij A[i,j,k] * C[i,j,w]`` (a D x D matrix)."""
    tensor = np.asarray(tensor, dtype=np.float64)
    cooc = np.asarray(cooc, dtype=np.float64)
    if tensor.shape != cooc.shape:
        raise DimensionError(f"tensor shape {tensor.shape} != co-occurrence shape {cooc.shape}")
    return np.einsum("ijk,ijw->kw", tensor, cooc)


@dataclass(frozen=True)
class SketchParams:
    """Count-sketch tables for both bilinear branches, derived from one seed."""

    dim: int
    seed: int
    h1: np.ndarray
    s1: np.ndarray
    h2: np.ndarray
    s2: np.ndarray

    @property
    def depth(self) -> int:
        return self.h1.shape[0]


def make_sketch_params(depth: int, dim: int, seed: int) -> SketchParams:
    """Generate the sketch tables for input depth D and output dimension d.

    Deterministic in (seed, depth, dim); see the module docstring for the
    draw order.
    """
    if depth < 1 or dim < 1:
        raise DomainError(f"depth and dim must be positive, got ({depth}, {dim})")
    draws = _splitmix64_stream(int(seed), 4 * depth)

    def hashes(block):
        return np.array([v % dim for v in block], dtype=np.intp)

    def signs(block):
        return np.array([1.0 if (v & 1) else -1.0 for v in block])

    return SketchParams(
        dim=dim,
        seed=int(seed),
        h1=hashes(draws[:depth]),
        s1=signs(draws[depth : 2 * depth]),
        h2=hashes(draws[2 * depth : 3 * depth]),
        s2=signs(draws[3 * depth :]),
    )


def _sketch_matrix(h: np.ndarray, s: np.ndarray, dim: int) -> np.ndarray:
    """Dense (D, d) scatter matrix: column h[k] of row k holds s[k]."""
    mat = np.zeros((h.shape[0], dim))
    mat[np.arange(h.shape[0]), h] = s
    return mat


def _circular_conv_direct(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """O(d^2) circular convolution of rows of x with rows of y, summed over rows."""
    d = x.shape[1]
    idx = (np.arange(d)[:, None] - np.arange(d)[None, :]) % d
    out = np.zeros(d)
    for xi, yi in zip(x, y):
        out += xi @ yi[idx.T]
    return out


def compact_bilinear_pool(
    tensor: np.ndarray,
    cooc: np.ndarray,
    params: SketchParams,
    mask: np.ndarray | None = None,
    method: str = "fft",
) -> np.ndarray:
    """Count-sketch approximation of bilinear pooling (length-d descriptor).

    Per location, both branch vectors (activations, optionally mask-scaled,
    and co-occurrences) are count-sketched and circularly convolved; the
    results are summed over locations.  Inner products of these descriptors
    approximate inner products of the exact bilinear matrices.

    ``method`` selects the circular convolution: "fft" (transform, multiply,
    inverse) or "direct" (O(d^2) accumulation); both are exact up to
    rounding.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    cooc = np.asarray(cooc, dtype=np.float64)
    if tensor.shape != cooc.shape:
        raise DimensionError(f"tensor shape {tensor.shape} != co-occurrence shape {cooc.shape}")
    if params.depth != tensor.shape[2]:
        raise DimensionError(
            f"sketch built for depth {params.depth}, tensor has depth {tensor.shape[2]}"
        )
    m, n, d_in = tensor.shape
    branch1 = tensor if mask is None else masked_tensor(tensor, mask)
    flat1 = branch1.reshape(m * n, d_in)
    flat2 = cooc.reshape(m * n, d_in)
    psi1 = flat1 @ _sketch_matrix(params.h1, params.s1, params.dim)
    psi2 = flat2 @ _sketch_matrix(params.h2, params.s2, params.dim)
    if method == "fft":
        spectrum = (np.fft.fft(psi1, axis=1) * np.fft.fft(psi2, axis=1)).sum(axis=0)
        return np.fft.ifft(spectrum).real
    if method == "direct":
        return _circular_conv_direct(psi1, psi2)
    raise DomainError(f"unknown circular convolution method {method!r}")


def write_heatmap_csv(weights: np.ndarray, path) -> None:
    """Dump an M x N weight map as plain CSV."""
    np.savetxt(path, np.asarray(weights, dtype=np.float64), delimiter=",", fmt="%.8g")


def write_heatmap_pgm(weights: np.ndarray, path) -> None:
    """Dump an M x N weight map as binary 8-bit PGM, min-max scaled to [0, 255]."""
    weights = np.asarray(weights, dtype=np.float64)
    lo, hi = float(weights.min()), float(weights.max())
    if hi > lo:
        scaled = np.round((weights - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(weights)
    m, n = weights.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{n} {m}\n255\n".encode("ascii"))
        fh.write(scaled.astype(np.uint8).tobytes())
