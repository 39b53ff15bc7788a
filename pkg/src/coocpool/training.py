"""Contrastive training of the co-occurrence filter over precomputed tensors.

The trained pipeline per branch is: threshold at the tensor mean (fixed,
independent of the filter), co-occurrence convolution, compact bilinear
pooling against the activation tensor, l2 normalization.  Only the filter
weights receive gradients; activation tensors and thresholds are frozen,
and the threshold mask is treated as a constant (it depends only on the
activations).

Everything downstream of the mask is linear in the filter weights, so the
analytic gradient is the chain: contrastive loss -> normalization -> sketch
adjoint (circular correlation) -> convolution weight adjoint.  Gradients
are validated against central finite differences in the test suite.
"""

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cooccurrence import TRAINABLE_DIAG, CoocFilter, cooc_conv, make_filter
from .errors import DimensionError, DomainError, TrainingError
from .pooling import SketchParams, _sketch_matrix, make_sketch_params
from .tensors import l2norm, load_tensor, mean_activation


@dataclass
class PairSample:
    tensor_a: np.ndarray
    tensor_b: np.ndarray
    label: int  # 1 = same class, 0 = different

    def __post_init__(self):
        if self.tensor_a.shape[2] != self.tensor_b.shape[2]:
            raise DimensionError(
                f"pair depths differ: {self.tensor_a.shape[2]} vs {self.tensor_b.shape[2]}"
            )
        if self.label not in (0, 1):
            raise DomainError(f"label must be 0 or 1, got {self.label}")


@dataclass
class TrainConfig:
    margin: float = 0.7
    learning_rate: float = 1e-3
    beta1: float = 0.85
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 5
    epochs: int = 30
    seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.margin <= 0:
            raise DomainError(f"margin must be positive, got {self.margin}")
        if self.learning_rate < 0:
            raise DomainError(f"learning rate must be nonnegative, got {self.learning_rate}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise DomainError(f"Adam betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.batch_size < 1:
            raise DomainError(f"batch size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise DomainError(f"epochs must be nonnegative, got {self.epochs}")
        if not (0 <= self.val_fraction < 1):
            raise DomainError(f"val fraction must lie in [0, 1), got {self.val_fraction}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, f: CoocFilter) -> "AdamState":
        return cls(m=np.zeros_like(f.weights), v=np.zeros_like(f.weights), step=0)


@dataclass
class TrainResult:
    filter: CoocFilter
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int


def forward_descriptor(tensor: np.ndarray, f: CoocFilter, params: SketchParams) -> np.ndarray:
    """Inference-path descriptor: co-occurrence at the tensor-mean threshold,
    compact bilinear pool with the activations, l2 normalization."""
    desc, _ = _forward_with_cache(np.asarray(tensor, dtype=np.float64), f, params)
    return desc


def _forward_with_cache(tensor, f, params):
    from .pooling import compact_bilinear_pool

    thr = mean_activation(tensor)
    cooc = cooc_conv(tensor, f, thr)
    pre_norm = compact_bilinear_pool(tensor, cooc, params)
    desc = l2norm(pre_norm)
    cache = {
        "tensor": tensor,
        "thr": thr,
        "pre_norm": pre_norm,
        "norm": float(np.linalg.norm(pre_norm)),
        "desc": desc,
    }
    return desc, cache


def contrastive_loss(fa: np.ndarray, fb: np.ndarray, label: int, tau: float) -> float:
    """``Y * d^2 + (1 - Y) * max(tau - d, 0)^2`` over descriptor distance d."""
    fa = np.asarray(fa, dtype=np.float64)
    fb = np.asarray(fb, dtype=np.float64)
    if fa.shape != fb.shape:
        raise DimensionError(f"descriptor shapes differ: {fa.shape} vs {fb.shape}")
    d = float(np.linalg.norm(fa - fb))
    if label == 1:
        return d * d
    return max(tau - d, 0.0) ** 2


def _loss_descriptor_grads(fa, fb, label, tau):
    diff = fa - fb
    d = float(np.linalg.norm(diff))
    if label == 1:
        grad_a = 2.0 * diff  # 2 d * diff / d, well defined at d = 0
    else:
        hinge = max(tau - d, 0.0)
        if hinge == 0.0 or d == 0.0:
            grad_a = np.zeros_like(diff)
        else:
            grad_a = -2.0 * hinge * diff / d
    return grad_a, -grad_a


def _branch_weight_grad(cache, f, params, grad_desc):
    """Adjoint of the forward branch: descriptor gradient -> filter gradient."""
    norm = cache["norm"]
    if norm == 0.0:
        return np.zeros_like(f.weights)
    desc = cache["desc"]
    # l2norm backward
    grad_pre = (grad_desc - np.dot(grad_desc, desc) * desc) / norm

    tensor = cache["tensor"]
    m, n, depth = tensor.shape
    rho = (tensor > cache["thr"]).astype(np.float64)
    masked = tensor * rho
    # branch 1 sketches the raw activations; only branch 2 depends on the filter
    psi1 = tensor.reshape(m * n, depth) @ _sketch_matrix(params.h1, params.s1, params.dim)

    # sketch/circular-convolution adjoint: grad wrt the second branch sketch
    spec1 = np.fft.fft(psi1, axis=1)
    grad_psi2 = np.fft.ifft(np.fft.fft(grad_pre)[None, :] * np.conj(spec1), axis=1).real
    grad_cooc = grad_psi2 @ _sketch_matrix(params.h2, params.s2, params.dim).T

    # convolution adjoint wrt weights, with the mask factors folded in
    scaled = (grad_cooc.reshape(m, n, depth) * rho) / (depth - 1)
    r, s = f.radius, f.window
    padded = np.zeros((m + 2 * r, n + 2 * r, depth))
    padded[r : r + m, r : r + n] = masked
    grad_w = np.empty_like(f.weights)
    for du in range(s):
        for dv in range(s):
            grad_w[:, :, du, dv] = np.einsum(
                "ijk,ijb->kb", scaled, padded[du : du + m, dv : dv + n]
            )
    return grad_w


def grad_filter(pair: PairSample, f: CoocFilter, params: SketchParams, tau: float) -> np.ndarray:
    """Analytic d(loss)/d(filter weights) for one pair (both siamese branches)."""
    ta = np.asarray(pair.tensor_a, dtype=np.float64)
    tb = np.asarray(pair.tensor_b, dtype=np.float64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fa, cache_a = _forward_with_cache(ta, f, params)
        fb, cache_b = _forward_with_cache(tb, f, params)
    grad_a, grad_b = _loss_descriptor_grads(fa, fb, pair.label, tau)
    return _branch_weight_grad(cache_a, f, params, grad_a) + _branch_weight_grad(
        cache_b, f, params, grad_b
    )


def adam_step(
    state: AdamState, f: CoocFilter, grad: np.ndarray, cfg: TrainConfig
) -> tuple[AdamState, CoocFilter]:
    """One bias-corrected Adam update; returns fresh state and filter."""
    if grad.shape != f.weights.shape:
        raise DimensionError(f"gradient shape {grad.shape} != weights shape {f.weights.shape}")
    step = state.step + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grad * grad
    m_hat = m / (1 - cfg.beta1**step)
    v_hat = v / (1 - cfg.beta2**step)
    weights = f.weights - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return AdamState(m=m, v=v, step=step), CoocFilter(weights, f.radius)


def _pair_loss(pair, f, params, tau):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fa = forward_descriptor(pair.tensor_a, f, params)
        fb = forward_descriptor(pair.tensor_b, f, params)
    return contrastive_loss(fa, fb, pair.label, tau)


def train(
    pairs,
    cfg: TrainConfig,
    radius: int = 4,
    sketch_dim: int = 8192,
    initial_filter: CoocFilter | None = None,
    sketch: SketchParams | None = None,
) -> TrainResult:
    """Mini-batch contrastive training of the co-occurrence filter.

    Shuffling, batching, and the train/validation split are all driven by
    ``cfg.seed``, so a run is reproducible bit for bit.  Returns the filter
    snapshot with the best validation loss (training loss when
    ``val_fraction`` leaves no holdout) plus both per-epoch loss curves.
    """
    pairs = list(pairs)
    if not pairs:
        raise TrainingError("no training pairs")
    depth = pairs[0].tensor_a.shape[2]
    for p in pairs:
        if p.tensor_a.shape[2] != depth:
            raise DimensionError("all pairs must share the channel depth")

    f = initial_filter if initial_filter is not None else make_filter(depth, radius, TRAINABLE_DIAG)
    params = sketch if sketch is not None else make_sketch_params(depth, sketch_dim, cfg.seed)

    def degenerate(pair):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, ca = _forward_with_cache(np.asarray(pair.tensor_a, dtype=np.float64), f, params)
            _, cb = _forward_with_cache(np.asarray(pair.tensor_b, dtype=np.float64), f, params)
        return ca["norm"] == 0.0 and cb["norm"] == 0.0

    if all(degenerate(p) for p in pairs):
        raise TrainingError(
            "every pair produced zero descriptors (no activations above threshold); "
            "nothing to train on"
        )

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(pairs))
    n_val = int(round(cfg.val_fraction * len(pairs)))
    n_val = min(n_val, len(pairs) - 1)
    val_set = [pairs[i] for i in order[:n_val]]
    train_set = [pairs[i] for i in order[n_val:]]

    state = AdamState.zeros_like(f)
    train_losses: list[float] = []
    val_losses: list[float] = []
    best = (np.inf, 0, f)
    for epoch in range(cfg.epochs):
        epoch_order = rng.permutation(len(train_set))
        batch_losses = []
        for start in range(0, len(train_set), cfg.batch_size):
            batch = [train_set[i] for i in epoch_order[start : start + cfg.batch_size]]
            grads = np.zeros_like(f.weights)
            for pair in batch:
                batch_losses.append(_pair_loss(pair, f, params, cfg.margin))
                grads += grad_filter(pair, f, params, cfg.margin)
            state, f = adam_step(state, f, grads / len(batch), cfg)
        train_losses.append(float(np.mean(batch_losses)))
        monitor_set = val_set if val_set else train_set
        monitor = float(np.mean([_pair_loss(p, f, params, cfg.margin) for p in monitor_set]))
        val_losses.append(monitor)
        if monitor < best[0]:
            best = (monitor, epoch, CoocFilter(f.weights.copy(), f.radius))

    if cfg.epochs == 0:
        best = (np.inf, 0, f)
    return TrainResult(
        filter=best[2],
        train_losses=train_losses,
        val_losses=val_losses,
        best_epoch=best[1],
    )


def load_pair_list(path, base_dir=None) -> list[PairSample]:
    """Parse a pair-list file: one ``path_a<TAB>path_b<TAB>label`` per line."""
    path = Path(path)
    if not path.is_file():
        raise TrainingError(f"pair list not found: {path}")
    base = Path(base_dir) if base_dir is not None else path.parent
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise TrainingError(f"{path}:{lineno}: expected 'path_a\\tpath_b\\tlabel'")
        path_a, path_b, label = parts
        pairs.append(
            PairSample(
                tensor_a=load_tensor(_resolve(path_a, base)),
                tensor_b=load_tensor(_resolve(path_b, base)),
                label=int(label),
            )
        )
    return pairs


def _resolve(p, base):
    p = Path(p)
    return p if p.is_absolute() else base / p
