"""Numerical kernels for the skill classifier.

All operations work on plain numpy arrays laid out channels-first: a
multivariate series is a 2-D array of shape ``(channels, frames)``.
Forward/backward pairs are hand-derived for exactly the layer types the
network uses (width-3 same-padded convolution, ReLU, global average
pooling, dense head, softmax cross-entropy).

Every function follows the dtype of its inputs, so the same code paths run
in float32 for training and in float64 for finite-difference checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EmptyInputError, ShapeError

KERNEL_WIDTH = 3


@dataclass
class ConvParams:
    """Weights of one width-3 convolution: kernels (out, in, 3) and biases (out,)."""

    kernels: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels)
        self.biases = np.asarray(self.biases)
        if self.kernels.ndim != 3 or self.kernels.shape[2] != KERNEL_WIDTH:
            raise ShapeError(
                f"conv kernels must have shape (out, in, {KERNEL_WIDTH}), "
                f"got {self.kernels.shape}"
            )
        if self.biases.shape != (self.kernels.shape[0],):
            raise ShapeError(
                f"conv biases must have shape ({self.kernels.shape[0]},), "
                f"got {self.biases.shape}"
            )

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]


@dataclass
class DenseParams:
    """Weights of the output head: weights (classes, features) and biases (classes,)."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.biases = np.asarray(self.biases)
        if self.weights.ndim != 2:
            raise ShapeError(f"dense weights must be 2-D, got {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"dense biases must have shape ({self.weights.shape[0]},), "
                f"got {self.biases.shape}"
            )


def _check_series(x: np.ndarray, name: str = "input") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (channels, frames), got shape {x.shape}")
    if x.shape[1] == 0:
        raise EmptyInputError(f"{name} has zero frames")
    if x.shape[0] == 0:
        raise ShapeError(f"{name} has zero channels")
    return x


def shifted_stack(x: np.ndarray) -> np.ndarray:
    """Stack the three one-frame shifts of ``x`` (zero-filled at the ends).

    Row block ``tap`` at frame t holds x[:, t + tap - 1], so a same-padded
    width-3 convolution becomes a single matrix product against this stack.
    """
    c, length = x.shape
    stack = np.zeros((KERNEL_WIDTH * c, length), dtype=x.dtype)
    stack[:c, 1:] = x[:, :-1]
    stack[c : 2 * c] = x
    stack[2 * c :, :-1] = x[:, 1:]
    return stack


def _kernel_matrix(params: ConvParams) -> np.ndarray:
    # column order (tap, in_channel) to match shifted_stack's row order
    return np.ascontiguousarray(params.kernels.transpose(0, 2, 1)).reshape(
        params.out_channels, -1
    )


def conv1d_same(
    x: np.ndarray, params: ConvParams, _stack: np.ndarray | None = None
) -> np.ndarray:
    """Length-preserving width-3 cross-correlation with one zero frame padded per side.

    out[o, t] = bias[o] + sum_{i, tap} kernels[o, i, tap] * x[i, t + tap - 1]
    with out-of-range input frames treated as zero.
    """
    x = _check_series(x)
    if x.shape[0] != params.in_channels:
        raise ShapeError(
            f"input has {x.shape[0]} channels but kernels expect {params.in_channels}"
        )
    stack = shifted_stack(x) if _stack is None else _stack
    out = _kernel_matrix(params) @ stack
    out += params.biases[:, None]
    return out


def conv1d_backward(
    x: np.ndarray,
    params: ConvParams,
    upstream: np.ndarray,
    _stack: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream * conv1d_same(x, params))``.

    Returns (d_kernels, d_biases, d_input), shape-congruent with
    (params.kernels, params.biases, x).
    """
    x = _check_series(x)
    upstream = np.asarray(upstream)
    c, length = x.shape
    if upstream.shape != (params.out_channels, length):
        raise ShapeError(
            f"upstream grad shape {upstream.shape} does not match conv output "
            f"({params.out_channels}, {length})"
        )
    if c != params.in_channels:
        raise ShapeError(
            f"input has {c} channels but kernels expect {params.in_channels}"
        )
    stack = shifted_stack(x) if _stack is None else _stack
    d_kmat = upstream @ stack.T  # (out, 3*in) in (tap, in) column order
    d_kernels = np.ascontiguousarray(
        d_kmat.reshape(params.out_channels, KERNEL_WIDTH, c).transpose(0, 2, 1)
    )
    d_stack = _kernel_matrix(params).T @ upstream
    d_input = d_stack[c : 2 * c].copy()
    d_input[:, :-1] += d_stack[:c, 1:]
    d_input[:, 1:] += d_stack[2 * c :, :-1]
    d_biases = upstream.sum(axis=1)
    return d_kernels, d_biases, d_input


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pass upstream gradient where x > 0, zero elsewhere (zero at exactly 0)."""
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if x.shape != upstream.shape:
        raise ShapeError(f"relu grad shapes differ: {x.shape} vs {upstream.shape}")
    return np.where(x > 0, upstream, np.zeros((), dtype=upstream.dtype))


def gap(x: np.ndarray) -> np.ndarray:
    """Global average pooling: per-channel mean over frames, (K, l) -> (K,)."""
    x = _check_series(x)
    return x.mean(axis=1)


def gap_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Distribute upstream[k] / l uniformly over the frames of channel k."""
    x = _check_series(x)
    upstream = np.asarray(upstream)
    if upstream.shape != (x.shape[0],):
        raise ShapeError(
            f"upstream grad shape {upstream.shape} does not match ({x.shape[0]},)"
        )
    length = x.shape[1]
    per_frame = (upstream / length).astype(x.dtype, copy=False)
    return np.repeat(per_frame[:, None], length, axis=1)


def dense_logits(features: np.ndarray, params: DenseParams) -> np.ndarray:
    """Affine head: logits = weights @ features + biases."""
    features = np.asarray(features)
    if features.shape != (params.weights.shape[1],):
        raise ShapeError(
            f"feature vector has shape {features.shape}, head expects "
            f"({params.weights.shape[1]},)"
        )
    return params.weights @ features + params.biases


def dense_backward(
    features: np.ndarray, params: DenseParams, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream * dense_logits(features, params))``.

    Returns (d_weights, d_biases, d_features).
    """
    features = np.asarray(features)
    upstream = np.asarray(upstream)
    if upstream.shape != (params.weights.shape[0],):
        raise ShapeError(
            f"upstream grad shape {upstream.shape} does not match "
            f"({params.weights.shape[0]},)"
        )
    d_weights = np.outer(upstream, features)
    d_features = params.weights.T @ upstream
    return d_weights, upstream.copy(), d_features


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max-subtraction before exponentiation)."""
    logits = np.asarray(logits)
    shifted = logits - logits.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def softmax_cross_entropy(
    logits: np.ndarray, label: int
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss, probabilities and logit gradients for one labelled sample.

    loss = -log(probs[label]); logit gradient is probs - onehot(label).
    """
    logits = np.asarray(logits)
    n = logits.shape[0]
    if not 0 <= int(label) < n:
        raise DomainError(f"label {label} outside [0, {n})")
    probs = softmax(logits)
    # log via the shifted logits to avoid log(exp(...)) round-trip
    shifted = logits - logits.max()
    loss = float(np.log(np.exp(shifted).sum()) - shifted[int(label)])
    grads = probs.copy()
    grads[int(label)] -= 1
    return loss, probs, grads


def glorot_uniform(
    shape: tuple[int, ...],
    fan_in: int,
    fan_out: int,
    rng: np.random.Generator,
    dtype=np.float32,
) -> np.ndarray:
    """Uniform samples in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    if fan_in <= 0 or fan_out <= 0:
        raise DomainError(f"fans must be positive, got ({fan_in}, {fan_out})")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_conv(
    out_channels: int, in_channels: int, rng: np.random.Generator, dtype=np.float32
) -> ConvParams:
    """Glorot-initialised kernels (fans count the 3 taps), zero biases."""
    kernels = glorot_uniform(
        (out_channels, in_channels, KERNEL_WIDTH),
        fan_in=in_channels * KERNEL_WIDTH,
        fan_out=out_channels * KERNEL_WIDTH,
        rng=rng,
        dtype=dtype,
    )
    return ConvParams(kernels, np.zeros(out_channels, dtype=dtype))


def init_dense(
    n_classes: int, n_features: int, rng: np.random.Generator, dtype=np.float32
) -> DenseParams:
    """Glorot-initialised head weights, zero biases."""
    weights = glorot_uniform(
        (n_classes, n_features),
        fan_in=n_features,
        fan_out=n_classes,
        rng=rng,
        dtype=dtype,
    )
    return DenseParams(weights, np.zeros(n_classes, dtype=dtype))


@dataclass
class AdamState:
    """Per-tensor first/second moment estimates plus the shared step counter."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Moment tensors are allocated lazily on first use. Any weight decay must
    already be folded into ``grads`` by the caller.
    """
    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name, p in params.items():
        if name not in grads:
            raise ShapeError(f"missing gradient for parameter '{name}'")
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter "
                f"'{name}' shape {p.shape}"
            )
        m = state.first_moment.setdefault(name, np.zeros_like(p))
        v = state.second_moment.setdefault(name, np.zeros_like(p))
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        m_hat = m / correction1
        v_hat = v / correction2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
