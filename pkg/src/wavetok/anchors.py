"""Event saliency and budget-capped anchor selection.

Indices are 0-based here: position 0 is the first timestep, whose
saliency is fixed to 0 because it has no predecessor, so it is never a
candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Linear, Module, Tensor
from .autodiff import functional as F

CHANNEL_MODES = ("shared", "per_channel")


class SaliencyHead(Module):
    """Bias-free key/query projections d -> d/4."""

    def __init__(self, dim: int, rng: np.random.Generator):
        out = dim // 4
        if out < 1:
            raise ValueError(f"embedding width {dim} too small for d/4 projections")
        self.key = Linear(dim, out, rng, bias=False)
        self.query = Linear(dim, out, rng, bias=False)


def saliency(fused: Tensor, head: SaliencyHead, channel_mode: str = "shared") -> Tensor:
    """1 - cos(F_k(E_{t-1}), F_q(E_t)) with a leading zero.

    ``fused`` is (..., C, L, d). Shared mode averages channels, giving
    (..., L); per-channel mode returns (..., C, L).
    """
    if channel_mode not in CHANNEL_MODES:
        raise ValueError(f"channel_mode must be one of {CHANNEL_MODES}")
    if fused.shape[-2] < 2:
        raise ValueError("saliency needs at least two timesteps")
    # one GEMM for both projections; slicing afterwards keeps it contiguous
    width = head.key.weight.shape[1]
    both = F.matmul(fused, F.concat([head.key.weight, head.query.weight], axis=1))
    keys = both[..., :-1, :width]
    queries = both[..., 1:, width:]
    change = 1.0 - F.cosine_similarity(keys, queries, axis=-1)  # (..., C, L-1)
    zero = Tensor(np.zeros(change.shape[:-1] + (1,)))
    per_channel = F.concat([zero, change], axis=-1)
    if channel_mode == "per_channel":
        return per_channel
    return F.mean(per_channel, axis=-2)


def budget(tau: float, length: int) -> int:
    if not 0.0 < tau < 1.0:
        raise ValueError(f"compression ratio must lie in (0, 1), got {tau}")
    return max(1, math.ceil(tau * length))


def nms_window(tau: float, length: int) -> int:
    return length // (2 * budget(tau, length))


def nms_mask(scores: np.ndarray, window: int) -> np.ndarray:
    """Boolean candidate mask over the last axis.

    Position t >= 1 survives iff it beats every earlier neighbour within
    ``window`` strictly and every later neighbour at least weakly, i.e. it
    is the window's maximum with ties going to the smallest index.
    """
    p = np.asarray(scores, dtype=np.float64)
    length = p.shape[-1]
    keep = np.ones(p.shape, dtype=bool)
    keep[..., 0] = False
    for o in range(1, min(window, length) + 1):
        # left neighbour u = t - o, valid for u >= 1
        left = np.full(p.shape, -np.inf)
        left[..., o + 1 :] = p[..., 1 : length - o]
        keep &= p > left
        right = np.full(p.shape, -np.inf)
        right[..., : length - o] = p[..., o:]
        keep &= p >= right
    return keep


def nms(scores: np.ndarray, window: int) -> np.ndarray:
    """Sorted candidate indices for a single 1-D saliency sequence."""
    return np.flatnonzero(nms_mask(scores, window))


def top_k(scores: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Keep the ``k`` highest-scoring candidates (ties -> smaller index), sorted."""
    if len(candidates) <= k:
        return np.asarray(candidates, dtype=np.int64)
    order = np.lexsort((candidates, -scores[candidates]))
    return np.sort(candidates[order[:k]])


@dataclass(frozen=True)
class AnchorSet:
    anchors: np.ndarray
    budget: int
    window: int
    tau: float

    def __len__(self) -> int:
        return len(self.anchors)


class NonFiniteSaliencyError(ValueError):
    """Saliency contains NaN or infinity, so no ordering exists."""


def _finite(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise NonFiniteSaliencyError("saliency contains non-finite values")
    return scores


def select_anchors(scores: np.ndarray, tau: float, length: int | None = None) -> AnchorSet:
    scores = _finite(scores)
    length = scores.shape[-1] if length is None else length
    cap = budget(tau, length)
    window = length // (2 * cap)
    candidates = nms(scores, window)
    if len(candidates) == 0:
        raise ValueError("no anchor candidates; sequence too short")
    return AnchorSet(top_k(scores, candidates, cap), cap, window, tau)


def select_anchors_batch(scores: np.ndarray, tau: float) -> list[AnchorSet]:
    """Row-wise :func:`select_anchors` for a (B, L) score matrix."""
    scores = _finite(scores)
    length = scores.shape[-1]
    cap = budget(tau, length)
    window = length // (2 * cap)
    mask = nms_mask(scores, window)
    out = []
    for row, keep in zip(scores, mask):
        candidates = np.flatnonzero(keep)
        if len(candidates) == 0:
            raise ValueError("no anchor candidates; sequence too short")
        out.append(AnchorSet(top_k(row, candidates, cap), cap, window, tau))
    return out
