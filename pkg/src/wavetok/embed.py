"""Hierarchical embedding: convolutional detail encoder, hourglass context
encoder, and feature-axis concatenation into the per-timestep embedding."""

from __future__ import annotations

import numpy as np

from .autodiff import AttentionBlock, Conv1d, Linear, Module, Tensor
from .autodiff import functional as F


def select_stride(length: int, max_context: int) -> int:
    """Smallest pooling stride that brings ``length`` within ``max_context`` tokens."""
    if length < 1 or max_context < 1:
        raise ValueError("length and max_context must be positive")
    return max(1, -(-length // max_context))


class DetailEncoder(Module):
    """Two same-padded convolutions over the (K+1) detail planes."""

    def __init__(self, planes: int, dim: int, rng: np.random.Generator, kernel: int = 5):
        self.planes = planes
        self.kernel = kernel
        self.conv1 = Conv1d(planes, dim, kernel, rng)
        self.conv2 = Conv1d(dim, dim, kernel, rng)

    def __call__(self, stream) -> Tensor:
        # stream: (N, K+1, L) -> (N, L, d_U)
        stream = stream if isinstance(stream, Tensor) else Tensor(stream)
        if stream.shape[-2] != self.planes:
            raise ValueError(f"detail stream has {stream.shape[-2]} planes, encoder expects {self.planes}")
        h = F.gelu(self.conv1(stream))
        return F.swapaxes(self.conv2(h), -1, -2)


class ContextEncoder(Module):
    """Linear lift, average-pool downscale, one attention block, interpolate back."""

    def __init__(self, planes: int, dim: int, heads: int, max_context: int, rng: np.random.Generator):
        self.planes = planes
        self.max_context = max_context
        self.lift = Linear(planes, dim, rng)
        self.block = AttentionBlock(dim, heads, rng)

    def __call__(self, stream, length: int | None = None) -> Tensor:
        # stream: (N, J+1-K, L) -> (N, L, d_V)
        stream = stream if isinstance(stream, Tensor) else Tensor(stream)
        if stream.shape[-2] != self.planes:
            raise ValueError(f"context stream has {stream.shape[-2]} planes, encoder expects {self.planes}")
        length = stream.shape[-1] if length is None else length
        stride = select_stride(stream.shape[-1], self.max_context)
        # averaging commutes with the affine lift, so pool the raw planes first
        pooled = F.avg_pool1d(F.swapaxes(stream, -1, -2), stride, axis=-2)
        mixed = self.block(self.lift(pooled))  # (N, L/s, d_V)
        return F.resample(mixed, length, axis=-2)


def fuse_embeddings(detail: Tensor, context: Tensor) -> Tensor:
    if detail.shape[:-1] != context.shape[:-1]:
        raise ValueError(f"cannot fuse embeddings of shapes {detail.shape} and {context.shape}")
    return F.concat([detail, context], axis=-1)


class HierarchicalEmbedding(Module):
    def __init__(
        self,
        levels: int,
        partition: int,
        rng: np.random.Generator,
        detail_dim: int = 32,
        context_dim: int = 32,
        heads: int = 4,
        max_context: int = 128,
        kernel: int = 5,
    ):
        if not 1 <= partition <= levels:
            raise ValueError(f"partition index {partition} outside [1, {levels}]")
        self.levels, self.partition = levels, partition
        self.detail_dim, self.context_dim = detail_dim, context_dim
        self.detail = DetailEncoder(partition + 1, detail_dim, rng, kernel)
        self.context = ContextEncoder(levels + 1 - partition, context_dim, heads, max_context, rng)

    @property
    def dim(self) -> int:
        return self.detail_dim + self.context_dim

    def __call__(self, detail_stream: np.ndarray, context_stream: np.ndarray) -> Tensor:
        """Streams are (B, C, planes, L); returns E^F as (B, C, L, d)."""
        b, c = detail_stream.shape[:2]
        length = detail_stream.shape[-1]
        det = detail_stream.reshape(b * c, *detail_stream.shape[2:])
        ctx = context_stream.reshape(b * c, *context_stream.shape[2:])
        fused = fuse_embeddings(self.detail(det), self.context(ctx, length))
        return fused.reshape(b, c, length, self.dim)
