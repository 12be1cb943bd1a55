"""Parameter containers and the reusable layers built on the functional ops."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


def parameter(data, name: str | None = None) -> Tensor:
    """Trainable leaf in the active compute precision."""
    return Tensor(np.array(data), requires_grad=True, name=name)


class Module:
    """Attribute-based parameter registry.

    Parameters are ``Tensor`` attributes with ``requires_grad``; submodules
    are ``Module`` attributes (or lists of them). Names are dotted paths.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {p.shape}")
            p.data = value.astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = parameter(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def __call__(self, x) -> Tensor:
        return F.layer_norm(x, self.gain, self.bias)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(c_in * k)
        self.kernels = parameter(rng.uniform(-bound, bound, size=(c_out, c_in, k)))
        self.bias = parameter(np.zeros(c_out))

    def __call__(self, x) -> Tensor:
        return F.conv1d(x, self.kernels, self.bias, padding="same")


class MLP(Module):
    """Two-layer perceptron with a GELU between the layers."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator):
        self.fc1 = Linear(n_in, n_hidden, rng)
        self.fc2 = Linear(n_hidden, n_out, rng)

    def __call__(self, x) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


MASK_FILL = -1e9


class AttentionBlock(Module):
    """Pre-norm transformer encoder block.

    ``x`` is (N, T, d). ``key_mask`` (N, T) marks valid tokens; masked keys
    receive no attention weight. Padding queries still produce outputs, but
    downstream pooling is expected to ignore them.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ff_mult: int = 2):
        if dim % heads:
            raise ValueError(f"width {dim} is not divisible by head count {heads}")
        self.dim, self.heads = dim, heads
        self.norm1 = LayerNorm(dim)
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        self.ff = MLP(dim, ff_mult * dim, dim, rng)
        self.last_attention: np.ndarray | None = None

    def attention(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        n, t, d = x.shape
        h, dh = self.heads, d // self.heads
        qkv = self.qkv(x).reshape(n, t, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q * (1.0 / math.sqrt(dh))) @ k.transpose(0, 1, 3, 2)
        if key_mask is not None and not np.all(key_mask):
            fill = np.where(np.asarray(key_mask, dtype=bool), 0.0, MASK_FILL)[:, None, None, :]
            scores = scores + fill
        weights = F.softmax(scores, axis=-1)
        self.last_attention = weights.data
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(n, t, d)
        return self.proj(ctx)

    def __call__(self, x, key_mask: np.ndarray | None = None) -> Tensor:
        x = F.add(x, self.attention(self.norm1(x), key_mask))
        return x + self.ff(self.norm2(x))


def sinusoidal_encoding(positions: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal code for positions normalised to [0, 1].

    Frequencies are geometric from pi to 256*pi so both coarse and fine
    timing are representable. An odd ``dim`` leaves the last slot zero.
    """
    positions = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    if half == 0:
        return np.zeros(positions.shape + (dim,))
    freqs = math.pi * 256.0 ** (np.arange(half) / max(half - 1, 1))
    angles = positions[..., None] * freqs
    code = np.zeros(positions.shape + (dim,))
    code[..., 0 : 2 * half : 2] = np.sin(angles)
    code[..., 1 : 2 * half : 2] = np.cos(angles)
    return code
