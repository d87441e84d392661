"""Shared trainable building blocks: dense layers, layer norm, feed-forward."""

import numpy as np

from .tensor import ParamStore, Tensor, dropout, elu, matmul, mean_, power

__all__ = ["Dense", "LayerNorm", "FeedForward", "uniform_init", "dropout"]


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform weights in +-sqrt(1/fan_in)."""
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    """Affine map (L, d_in) -> (L, d_out); bias optional."""

    def __init__(self, store: ParamStore, prefix: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.w = store.add(f"{prefix}.w", uniform_init(rng, (d_in, d_out), d_in))
        self.b = store.add(f"{prefix}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.w)
        if self.b is not None:
            out = out + self.b
        return out


class LayerNorm:
    """Per-position normalization over the feature axis with learned gain/bias."""

    def __init__(self, store: ParamStore, prefix: str, d: int, eps: float = 1e-5):
        self.g = store.add(f"{prefix}.g", np.ones(d))
        self.b = store.add(f"{prefix}.b", np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = mean_(x, axis=-1, keepdims=True)
        centered = x - mu
        var = mean_(centered * centered, axis=-1, keepdims=True)
        inv = power(var + self.eps, -0.5)
        return centered * inv * self.g + self.b


class FeedForward:
    """Two dense layers with an ELU in between, applied position-wise."""

    def __init__(self, store: ParamStore, prefix: str, d_model: int, d_hidden: int,
                 rng: np.random.Generator):
        self.fc1 = Dense(store, f"{prefix}.fc1", d_model, d_hidden, rng)
        self.fc2 = Dense(store, f"{prefix}.fc2", d_hidden, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(elu(self.fc1(x)))
