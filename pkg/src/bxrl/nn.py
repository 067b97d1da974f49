"""Layers and blocks assembled from the autodiff primitives."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class Module:
    """Container with recursive, deterministically ordered parameter lookup."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = []
        for attr, value in self.__dict__.items():
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                out.append((path, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix=f"{path}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(prefix=f"{path}.{i}."))
                    elif isinstance(item, Parameter):
                        out.append((f"{path}.{i}", item))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, param in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name!r} in state")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != param.data.shape:
                raise ValueError(
                    f"parameter {name!r}: shape {arr.shape} != {param.data.shape}"
                )
            param.data = arr.copy()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        std = 1.0 / np.sqrt(in_dim)
        self.weight = Parameter(rng.normal(0.0, std, size=(in_dim, out_dim)))
        self.bias = Parameter(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias)


def causal_mask(seq_len: int) -> np.ndarray:
    """Lower-triangular boolean mask: position t attends to positions <= t."""
    return np.tril(np.ones((seq_len, seq_len), dtype=bool))


def sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal positional encoding table of shape (max_len, dim)."""
    pos = np.arange(max_len)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


class CausalSelfAttention(Module):
    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator):
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        b, t, d = x.shape

        def split(h: Tensor) -> Tensor:
            # (B, T, D) -> (B, H, T, Dh)
            return ad.transpose(
                ad.reshape(h, (b, t, self.num_heads, self.head_dim)), (0, 2, 1, 3)
            )

        out = ad.masked_attention(split(self.wq(x)), split(self.wk(x)), split(self.wv(x)), mask)
        out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (b, t, d))
        return self.wo(out)


class TransformerBlock(Module):
    """Pre-norm causal transformer block with a GELU feed-forward."""

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator,
                 ffn_mult: int = 2):
        self.ln1 = LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, num_heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ffn_in = Linear(dim, ffn_mult * dim, rng)
        self.ffn_out = Linear(ffn_mult * dim, dim, rng)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = ad.add(x, self.attn(self.ln1(x), mask))
        return ad.add(x, self.ffn_out(ad.gelu(self.ffn_in(self.ln2(x)))))


class MLP3(Module):
    """3-layer perceptron for vector observations."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int,
                 rng: np.random.Generator):
        self.fc1 = Linear(in_dim, hidden_dim, rng)
        self.fc2 = Linear(hidden_dim, hidden_dim, rng)
        self.fc3 = Linear(hidden_dim, out_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc3(ad.gelu(self.fc2(ad.gelu(self.fc1(x)))))


class CNN3(Module):
    """3-layer convnet with global average pooling for image observations."""

    def __init__(self, in_channels: int, channels: tuple[int, int, int],
                 out_dim: int, rng: np.random.Generator):
        c1, c2, c3 = channels
        std = 0.1
        self.w1 = Parameter(rng.normal(0.0, std, size=(c1, in_channels, 3, 3)))
        self.b1 = Parameter(np.zeros(c1))
        self.w2 = Parameter(rng.normal(0.0, std, size=(c2, c1, 3, 3)))
        self.b2 = Parameter(np.zeros(c2))
        self.w3 = Parameter(rng.normal(0.0, std, size=(c3, c2, 3, 3)))
        self.b3 = Parameter(np.zeros(c3))
        self.head = Linear(c3, out_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.gelu(ad.conv2d(x, self.w1, self.b1))
        h = ad.gelu(ad.conv2d(h, self.w2, self.b2))
        h = ad.gelu(ad.conv2d(h, self.w3, self.b3))
        pooled = ad.tmean(h, axis=(2, 3))
        return self.head(pooled)
