"""Parameter registry and the layer primitives built on the tensor core."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError
from .tensor import (Tensor, adaptive_avg_pool_1d, as_tensor, embedding, gelu,
                     matmul, softmax, swapaxes)


class Parameter:
    """A named, trainable (unless frozen) tensor in the active precision."""

    def __init__(self, data, frozen: bool = False):
        from .tensor import default_dtype

        self.value = Tensor(np.asarray(data, dtype=default_dtype()),
                            requires_grad=not frozen)
        self.frozen = frozen
        self.name = ""

    def freeze(self):
        self.frozen = True
        self.value.requires_grad = False
        self.value.grad = None

    def unfreeze(self):
        self.frozen = False
        self.value.requires_grad = True

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    def __repr__(self):
        tag = ", frozen" if self.frozen else ""
        return f"Parameter({self.name or '?'}, shape={self.value.shape}{tag})"


class Module:
    """Composable container; children are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                val.name = path
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{path}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        item.name = f"{path}.{i}"
                        yield f"{path}.{i}", item
            elif isinstance(val, dict):
                for k, item in val.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{k}.")
                    elif isinstance(item, Parameter):
                        item.name = f"{path}.{k}"
                        yield f"{path}.{k}", item

    def parameters(self) -> Iterator[Parameter]:
        for _, p in self.named_parameters():
            yield p

    def freeze(self):
        for p in self.parameters():
            p.freeze()
        return self

    def unfreeze(self):
        for p in self.parameters():
            p.unfreeze()
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if strict and (missing or extra):
            raise ConfigError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in own.items():
            if name in state:
                arr = np.asarray(state[name])
                if arr.shape != p.value.data.shape:
                    raise ConfigError(
                        f"shape mismatch for '{name}': {arr.shape} vs {p.value.data.shape}")
                p.value.data = arr.astype(p.value.data.dtype, copy=True)

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, init_scale: Optional[float] = None):
        scale = init_scale if init_scale is not None else 1.0 / math.sqrt(d_in)
        self.weight = Parameter(rng.normal(0.0, scale, (d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(as_tensor(x), self.weight.value)
        if self.bias is not None:
            out = out + self.bias.value
        return out


class LayerNorm(Module):
    """Per-row zero mean / unit variance before the optional affine; eps 1e-5."""

    def __init__(self, dim: int, affine: bool = True, eps: float = 1e-5):
        self.eps = eps
        self.gain = Parameter(np.ones(dim)) if affine else None
        self.shift = Parameter(np.zeros(dim)) if affine else None

    def __call__(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        y = centered * (var + self.eps) ** -0.5
        if self.gain is not None:
            y = y * self.gain.value + self.shift.value
        return y


class MultiHeadAttention(Module):
    """Scaled dot-product attention with Q/K/V/output projections.

    Accepts [.., n, d] operands; ``mask`` is an additive numpy array
    broadcastable to [.., heads, n_q, n_k] with 0 for visible and -inf for
    hidden positions.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 init_scale: float = 0.02):
        if dim % heads != 0:
            raise ConfigError(f"width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng, init_scale=init_scale)
        self.wk = Linear(dim, dim, rng, init_scale=init_scale)
        self.wv = Linear(dim, dim, rng, init_scale=init_scale)
        self.wo = Linear(dim, dim, rng, init_scale=init_scale)

    def _split(self, x: Tensor) -> Tensor:
        *lead, n, _ = x.shape
        return swapaxes(x.reshape(*lead, n, self.heads, self.head_dim), -2, -3)

    def _merge(self, x: Tensor) -> Tensor:
        y = swapaxes(x, -2, -3)
        *lead, n, _, _ = y.shape
        return y.reshape(*lead, n, self.dim)

    def __call__(self, q, k, v, mask: Optional[np.ndarray] = None) -> Tensor:
        qh = self._split(self.wq(q))
        kh = self._split(self.wk(k))
        vh = self._split(self.wv(v))
        scores = matmul(qh, swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(self.head_dim))
        if mask is not None:
            scores = scores + mask
        weights = softmax(scores, axis=-1)
        out = self._merge(matmul(weights, vh))
        return self.wo(out)


class FeedForward(Module):
    """linear -> GELU -> linear with hidden width expansion times dim."""

    def __init__(self, dim: int, rng: np.random.Generator, expansion: int = 4,
                 init_scale: float = 0.02):
        hidden = expansion * dim
        self.up = Linear(dim, hidden, rng, init_scale=init_scale)
        self.down = Linear(hidden, dim, rng, init_scale=init_scale)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(gelu(self.up(x)))


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator,
                 init_scale: float = 0.02):
        self.table = Parameter(rng.normal(0.0, init_scale, (count, dim)))

    def __call__(self, indices) -> Tensor:
        return embedding(self.table.value, np.asarray(indices, dtype=np.int64))


class TransformerBlock(Module):
    """Pre-norm residual block: x + Att(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 init_scale: float = 0.02):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng, init_scale=init_scale)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, rng, init_scale=init_scale)

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, mask=mask)
        x = x + self.ffn(self.norm2(x))
        return x


class Conv2d(Module):
    """im2col convolution over [B, C, H, W]; same-shape when padding=k//2."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        fan_in = c_in * kernel * kernel
        self.weight = Parameter(rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, c_out)))
        self.bias = Parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        from .tensor import pad_last, transpose, unfold_patches

        x = as_tensor(x)
        if self.padding:
            p = self.padding
            x = pad_last(x, [(p, p), (p, p)])
        b, _, h, w = x.shape
        oh = (h - self.kernel) // self.stride + 1
        ow = (w - self.kernel) // self.stride + 1
        cols = unfold_patches(x, self.kernel, self.stride)
        out = matmul(cols, self.weight.value) + self.bias.value
        return transpose(out.reshape(b, oh, ow, -1), (0, 3, 1, 2))


class Conv1d(Module):
    """im2col convolution over [B, C, T]."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        fan_in = c_in * kernel
        self.weight = Parameter(rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, c_out)))
        self.bias = Parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        from .tensor import pad_last, unfold_seq

        x = as_tensor(x)
        if self.padding:
            x = pad_last(x, [(self.padding, self.padding)])
        out = matmul(unfold_seq(x, self.kernel, self.stride), self.weight.value)
        out = out + self.bias.value
        return swapaxes(out, -1, -2)


_POSITION_CACHE: dict = {}


def sinusoidal_positions(n: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Fixed sin/cos position table, [n, dim]; cached per (n, dim, dtype)."""
    key = (n, dim, np.dtype(dtype).str)
    hit = _POSITION_CACHE.get(key)
    if hit is not None:
        return hit
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (idx // 2) / dim)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)
    table.setflags(write=False)
    _POSITION_CACHE[key] = table
    return table


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over all leading token axes of [.., n, d] down to [.., d]."""
    return x.mean(axis=-2)


def pool_rows(x: Tensor, n_out: int) -> Tensor:
    return adaptive_avg_pool_1d(x, n_out)
