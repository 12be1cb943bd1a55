"""Nearest-anchor clustering, saliency-weighted aggregation and token projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import MLP, Module, Tensor, sinusoidal_encoding
from .autodiff import functional as F

FUSION_EPS = 1e-6
ZERO_WEIGHT = 1e-9


@dataclass(frozen=True)
class Assignment:
    """``cluster[t]`` is the index k of the anchor owning timestep t."""

    anchors: np.ndarray
    cluster: np.ndarray
    bounds: np.ndarray  # (K, 2) inclusive [start, end] per cluster

    @property
    def owner(self) -> np.ndarray:
        """Anchor timestep assigned to every t (kappa)."""
        return self.anchors[self.cluster]

    @property
    def sizes(self) -> np.ndarray:
        return self.bounds[:, 1] - self.bounds[:, 0] + 1


def assign(anchors, length: int) -> Assignment:
    """Nearest anchor per timestep; equidistant timesteps go to the earlier anchor.

    Single sweep: cluster k ends at the midpoint floor((a_k + a_{k+1}) / 2).
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    if anchors.size == 0:
        raise ValueError("cannot assign timesteps to an empty anchor set")
    if np.any(np.diff(anchors) <= 0):
        raise ValueError("anchors must be strictly increasing")
    if anchors[0] < 0 or anchors[-1] >= length:
        raise ValueError("anchor outside the sequence")
    ends = np.empty(len(anchors), dtype=np.int64)
    ends[:-1] = (anchors[:-1] + anchors[1:]) // 2
    ends[-1] = length - 1
    starts = np.empty_like(ends)
    starts[0] = 0
    starts[1:] = ends[:-1] + 1
    cluster = np.repeat(np.arange(len(anchors)), ends - starts + 1)
    return Assignment(anchors, cluster, np.stack([starts, ends], axis=1))


def membership(assignments: list[Assignment], length: int, slots: int | None = None) -> np.ndarray:
    """Constant (B, K_max, L) 0/1 matrix of cluster membership."""
    slots = max(len(a.anchors) for a in assignments) if slots is None else slots
    m = np.zeros((len(assignments), slots, length))
    for b, a in enumerate(assignments):
        m[b, a.cluster, np.arange(length)] = 1.0
    return m


def fuse(fused: Tensor, weights: Tensor, member: np.ndarray) -> Tensor:
    """Saliency-weighted cluster means.

    ``fused`` is (B, C, L, d); ``weights`` is (B, L) shared across channels
    or (B, C, L); ``member`` is the (B, K, L) cluster matrix. Returns
    (B, C, K, d). Clusters whose weight sum is below 1e-9 fall back to the
    plain mean so an all-quiescent cluster does not collapse to zero.
    """
    w = weights if weights.ndim == 3 else weights.reshape(weights.shape[0], 1, weights.shape[1])
    m = member[:, None]  # (B, 1, K, L)
    numer = F.matmul(m, fused * w.reshape(*w.shape, 1))  # (B, C, K, d)
    mass = F.matmul(m, w.reshape(*w.shape, 1))  # (B, C|1, K, 1)
    weighted = numer / (mass + FUSION_EPS)
    low = mass.data < ZERO_WEIGHT
    real = member.sum(axis=-1)[:, None, :, None] > 0
    fallback = np.broadcast_to(low & real, weighted.shape)
    if not fallback.any():
        return weighted
    counts = np.maximum(member.sum(axis=-1), 1.0)[:, None, :, None]
    plain = F.matmul(m, fused) * (1.0 / counts)
    return F.where(fallback, plain, weighted)


def gather_anchors(fused: Tensor, anchor_sets: list[np.ndarray], slots: int) -> Tensor:
    """Embeddings at the anchor timesteps only, as (B, C, K, d)."""
    length = fused.shape[-2]
    sel = np.zeros((len(anchor_sets), slots, length))
    for b, anchors in enumerate(anchor_sets):
        sel[b, np.arange(len(anchors)), anchors] = 1.0
    return F.matmul(sel[:, None], fused)


class TokenProjector(Module):
    """Channel concatenation followed by a two-layer MLP to width d."""

    def __init__(self, channels: int, dim: int, rng: np.random.Generator, positional: bool = True):
        self.channels, self.dim = channels, dim
        self.positional = positional
        self.mlp = MLP(channels * dim, dim, dim, rng)

    def __call__(self, per_channel: Tensor, positions: np.ndarray, length: int) -> Tensor:
        """``per_channel`` (B, C, K, d), ``positions`` (B, K) timesteps -> (B, K, d)."""
        b, c, k, d = per_channel.shape
        if c * d != self.channels * self.dim:
            raise ValueError(f"projector expects {self.channels * self.dim} features, got {c * d}")
        merged = per_channel.transpose(0, 2, 1, 3).reshape(b, k, c * d)
        tokens = self.mlp(merged)
        if self.positional:
            tokens = tokens + sinusoidal_encoding(np.asarray(positions) / length, self.dim)
        return tokens


def padded_positions(anchor_sets: list[np.ndarray], slots: int) -> tuple[np.ndarray, np.ndarray]:
    """(B, K) anchor positions (0 where padded) and the validity mask."""
    pos = np.zeros((len(anchor_sets), slots))
    mask = np.zeros((len(anchor_sets), slots), dtype=bool)
    for b, anchors in enumerate(anchor_sets):
        pos[b, : len(anchors)] = anchors
        mask[b, : len(anchors)] = True
    return pos, mask
