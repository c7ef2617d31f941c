"""Small MLP decoder mapping 12 latent channels to 9 texture features.

One or more ReLU hidden layers of width D and a linear output layer.
Matrix products are accumulated column by column in a fixed order, so a
row's result is identical whether it is evaluated alone or inside any
batch — batched and per-pixel decodes agree bitwise, and results do not
depend on how work is chunked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INPUT_DIM = 12
OUTPUT_DIM = 9
HIDDEN_DIMS = (16, 32, 64)


def _affine(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """x @ weight.T + bias with a deterministic accumulation order.

    Accumulates over input columns sequentially; each output row only ever
    combines values from its own input row, which makes the result
    independent of batch composition.
    """
    n = x.shape[0]
    out = np.zeros((n, weight.shape[0]), dtype=x.dtype)
    for c in range(weight.shape[1]):
        out += x[:, c, None] * weight[None, :, c]
    out += bias[None, :]
    return out


@dataclass
class MLPDecoder:
    """Decoder weights: input 12 -> hidden D (xN, ReLU) -> output 9 (linear)."""

    weights: list[np.ndarray]  # each (out_dim, in_dim)
    biases: list[np.ndarray]

    @classmethod
    def create(
        cls, hidden_dim: int, num_hidden_layers: int = 1, rng=None
    ) -> "MLPDecoder":
        """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases."""
        if hidden_dim not in HIDDEN_DIMS:
            raise ValueError(f"hidden_dim must be one of {HIDDEN_DIMS}")
        if num_hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        if rng is None:
            rng = np.random.default_rng(0)
        dims = [INPUT_DIM] + [hidden_dim] * num_hidden_layers + [OUTPUT_DIM]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(1.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights=weights, biases=biases)

    @property
    def hidden_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_hidden_layers(self) -> int:
        return len(self.weights) - 1

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def as_float32(self) -> "MLPDecoder":
        """Single-precision copy for the compact inference path."""
        return MLPDecoder(
            weights=[w.astype(np.float32) for w in self.weights],
            biases=[b.astype(np.float32) for b in self.biases],
        )


@dataclass
class ForwardCache:
    """Activations captured by a forward pass, consumed by `backward_batch`."""

    x: np.ndarray
    pre_acts: list[np.ndarray]  # hidden pre-activations
    hidden: list[np.ndarray]  # hidden post-ReLU activations


def forward_batch(m: MLPDecoder, x: np.ndarray) -> np.ndarray:
    """Decode an (N, 12) batch to (N, 9) raw (unclamped) features."""
    y, _ = _forward_impl(m, x, want_cache=False)
    return y


def forward_batch_cached(m: MLPDecoder, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    return _forward_impl(m, x, want_cache=True)


def _forward_impl(m, x, want_cache):
    x = np.atleast_2d(np.asarray(x))
    if x.shape[1] != m.weights[0].shape[1]:
        raise ValueError(f"expected {m.weights[0].shape[1]} input channels, got {x.shape[1]}")
    pre_acts, hidden = [], []
    h = x
    for w, b in zip(m.weights[:-1], m.biases[:-1]):
        z = _affine(h, w, b)
        h = np.maximum(z, 0.0)
        if want_cache:
            pre_acts.append(z)
            hidden.append(h)
    y = _affine(h, m.weights[-1], m.biases[-1])
    cache = ForwardCache(x=x, pre_acts=pre_acts, hidden=hidden) if want_cache else None
    return y, cache


def forward(m: MLPDecoder, x: np.ndarray) -> np.ndarray:
    """Decode a single 12-vector; identical to a batch row by construction."""
    return forward_batch(m, np.asarray(x)[None, :])[0]


@dataclass
class ParamGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def as_list(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def backward_batch(
    m: MLPDecoder, cache: ForwardCache, upstream: np.ndarray
) -> tuple[ParamGrads, np.ndarray]:
    """Exact reverse-mode gradients for a batch.

    Args:
        upstream: (N, 9) gradients of the loss w.r.t. the raw outputs.

    Returns:
        (param_grads, dx) where dx is (N, 12).
    """
    upstream = np.atleast_2d(np.asarray(upstream))
    acts = [cache.x] + cache.hidden  # inputs to each affine layer
    w_grads = [np.empty(0)] * len(m.weights)
    b_grads = [np.empty(0)] * len(m.biases)

    delta = upstream
    for layer in range(len(m.weights) - 1, -1, -1):
        a_in = acts[layer]
        w_grads[layer] = delta.T @ a_in
        b_grads[layer] = delta.sum(axis=0)
        if layer > 0:
            da = delta @ m.weights[layer]
            delta = da * (cache.pre_acts[layer - 1] > 0.0)
    dx = delta @ m.weights[0]
    return ParamGrads(weights=w_grads, biases=b_grads), dx


def backward(
    m: MLPDecoder, x: np.ndarray, upstream: np.ndarray
) -> tuple[ParamGrads, np.ndarray]:
    """Single-sample gradients: runs forward for the cache, then backward."""
    _, cache = forward_batch_cached(m, np.asarray(x)[None, :])
    grads, dx = backward_batch(m, cache, np.asarray(upstream)[None, :])
    return grads, dx[0]
