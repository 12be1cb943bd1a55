"""End-to-end tokenizer + backbone classifier covering every variant."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import anchors as anc
from .. import fusion as fus
from ..autodiff import AttentionBlock, LayerNorm, Linear, Module, Tensor, precision
from ..autodiff import functional as F
from ..embed import HierarchicalEmbedding
from ..modwt import WaveletStack, modwt, partition_streams
from ..recon import Decoder, recon_loss
from .config import TrainConfig

# fixed child-stream ids so adding or removing one component never
# changes another component's initial weights
_STREAMS = {"embedding": 1, "saliency": 2, "projector": 3, "backbone": 4, "decoder": 5, "patcher": 6}


def _rng(seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAMS[component]])


def wavelet_planes(x: np.ndarray, levels: int, basis: str) -> np.ndarray:
    """(N, C, L) signals -> (N, J+1, C, L) MODWT stacks."""
    stack = modwt(x, levels, basis)
    return np.moveaxis(stack.to_array(), 0, 1)


def spectral_saliency(stack: WaveletStack | np.ndarray) -> np.ndarray:
    """Detail-coefficient l2 norm per timestep, min-max scaled to [0, 1].

    Accepts a :class:`WaveletStack` over (C, L) or a (..., J+1, C, L) array.
    Position 0 is zeroed like the learned saliency.
    """
    planes = np.moveaxis(stack.to_array(), 0, -3) if isinstance(stack, WaveletStack) else np.asarray(stack)
    details = planes[..., :-1, :, :]
    energy = np.sqrt((details**2).sum(axis=(-3, -2)))
    lo = energy.min(axis=-1, keepdims=True)
    hi = energy.max(axis=-1, keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (energy - lo) / safe, 0.0)
    scaled[..., 0] = 0.0
    return scaled


class Backbone(Module):
    """Two attention blocks, masked mean pooling, linear class head."""

    def __init__(self, dim: int, heads: int, classes: int, rng: np.random.Generator, depth: int = 2):
        self.blocks = [AttentionBlock(dim, heads, rng) for _ in range(depth)]
        self.norm = LayerNorm(dim)
        self.head = Linear(dim, classes, rng)

    def __call__(self, tokens: Tensor, mask: np.ndarray | None = None) -> Tensor:
        n, t, _ = tokens.shape
        mask = np.ones((n, t), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        x = tokens
        for block in self.blocks:
            x = block(x, mask)
        x = self.norm(x)
        weights = mask / mask.sum(axis=1, keepdims=True)
        pooled = F.matmul(weights[:, None, :], x).reshape(n, x.shape[-1])
        return self.head(pooled)


class PatchTokenizer(Module):
    """Fixed-window baseline: per-channel linear patch embedding, then the
    same channel merge as the dynamic path. With ``wavelet=True`` each
    patch carries every MODWT plane instead of the raw samples."""

    def __init__(self, cfg: TrainConfig, channels: int, rng: np.random.Generator, wavelet: bool = False):
        self.patch, self.stride = cfg.patch, cfg.patch_stride
        self.wavelet = wavelet
        width = cfg.patch * ((cfg.levels + 1) if wavelet else 1)
        self.embed = Linear(width, cfg.dim, rng)
        self.merge = fus.TokenProjector(channels, cfg.dim, rng, positional=cfg.positional)

    def count(self, length: int) -> int:
        if self.patch > length:
            raise ValueError(f"patch {self.patch} longer than signal length {length}")
        return (length - self.patch) // self.stride + 1

    def __call__(self, series: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """``series`` is (B, C, L) raw, or (B, J+1, C, L) planes when wavelet."""
        length = series.shape[-1]
        n = self.count(length)
        starts = np.arange(n) * self.stride
        win = np.lib.stride_tricks.sliding_window_view(series, self.patch, axis=-1)[..., starts, :]
        if self.wavelet:
            # (B, J+1, C, n, p) -> (B, C, n, (J+1)*p)
            b, planes, c = win.shape[:3]
            win = np.moveaxis(win, 1, 3).reshape(b, c, n, planes * self.patch)
        per_channel = self.embed(Tensor(np.ascontiguousarray(win)))
        positions = np.broadcast_to(starts, (series.shape[0], n))
        return self.merge(per_channel, positions, length), positions


@dataclass
class TokenBatch:
    tokens: Tensor  # (B, K, d)
    mask: np.ndarray  # (B, K)
    anchors: list[np.ndarray]
    saliency: np.ndarray | None = None  # (B, L) or (B, C, L)
    assignments: list[fus.Assignment] = field(default_factory=list)

    @property
    def counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)


@dataclass
class Outputs:
    logits: Tensor
    batch: TokenBatch
    task: Tensor | None = None
    rec: Tensor | None = None


class Model(Module):
    def __init__(self, cfg: TrainConfig, channels: int, classes: int):
        cfg.validate()
        self.cfg = cfg
        self.channels, self.classes = channels, classes
        with precision(cfg.precision):
            self._build(cfg, channels, classes)

    def _build(self, cfg: TrainConfig, channels: int, classes: int) -> None:
        d = cfg.dim
        if cfg.uses_anchors:
            self.embedding = HierarchicalEmbedding(
                cfg.levels, cfg.partition, _rng(cfg.seed, "embedding"),
                cfg.detail_dim, cfg.context_dim, cfg.heads, cfg.max_context, cfg.kernel,
            )
            if cfg.variant != "spec_bound":
                self.saliency_head = anc.SaliencyHead(d, _rng(cfg.seed, "saliency"))
            self.projector = fus.TokenProjector(channels, d, _rng(cfg.seed, "projector"), cfg.positional)
        else:
            self.patcher = PatchTokenizer(cfg, channels, _rng(cfg.seed, "patcher"), wavelet=cfg.variant == "fixed_dwt")
        self.backbone = Backbone(d, cfg.heads, classes, _rng(cfg.seed, "backbone"))
        self.decoder = (
            Decoder(d, cfg.levels, channels, _rng(cfg.seed, "decoder")) if cfg.uses_anchors else None
        )

    # -- tokenisation -----------------------------------------------------
    def planes(self, x: np.ndarray) -> np.ndarray:
        return wavelet_planes(x, self.cfg.levels, self.cfg.basis)

    def embed(self, x: np.ndarray, planes: np.ndarray | None = None) -> Tensor:
        cfg = self.cfg
        planes = self.planes(x) if planes is None else planes
        stack = WaveletStack.from_array(np.moveaxis(planes, 1, 0), cfg.basis)
        split = partition_streams(x, stack, cfg.partition)  # (B, C, planes, L)
        return self.embedding(split.detail_stream, split.context_stream)

    def tokenize(
        self,
        x: np.ndarray,
        planes: np.ndarray | None = None,
        anchors: list[np.ndarray] | None = None,
        tau: float | None = None,
    ) -> TokenBatch:
        """Turn (B, C, L) signals into padded token batches.

        ``anchors`` may be supplied to freeze the discrete selection, which
        makes the output a smooth function of the parameters.
        """
        with precision(self.cfg.precision):
            return self._tokenize(x, planes, anchors, tau)

    def _tokenize(self, x, planes, anchors, tau) -> TokenBatch:
        cfg = self.cfg
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ValueError(f"expected signals of shape (B, {self.channels}, L), got {x.shape}")
        tau = cfg.tau if tau is None else tau
        if not cfg.uses_anchors:
            series = x if cfg.variant == "fixed_patch" else (self.planes(x) if planes is None else planes)
            tokens, positions = self.patcher(series)
            n, k = positions.shape
            return TokenBatch(tokens, np.ones((n, k), dtype=bool), [p.copy() for p in positions])
        length = x.shape[-1]
        planes = self.planes(x) if planes is None else planes
        fused = self.embed(x, planes)
        if cfg.variant == "spec_bound":
            weights = Tensor(spectral_saliency(planes))
        else:
            weights = anc.saliency(fused, self.saliency_head, cfg.channel_mode)
        select_on = weights.data if weights.ndim == 2 else weights.data.mean(axis=1)
        if anchors is None:
            anchors = [a.anchors for a in anc.select_anchors_batch(select_on, tau)]
        slots = max(len(a) for a in anchors)
        positions, mask = fus.padded_positions(anchors, slots)
        if cfg.variant == "no_fusion":
            per_channel = fus.gather_anchors(fused, anchors, slots)
            assignments = [fus.assign(a, length) for a in anchors]
        else:
            assignments = [fus.assign(a, length) for a in anchors]
            member = fus.membership(assignments, length, slots)
            per_channel = fus.fuse(fused, weights, member)
        tokens = self.projector(per_channel, positions, length)
        return TokenBatch(tokens, mask, list(anchors), select_on, assignments)

    # -- full forward -------------------------------------------------------
    def __call__(self, x, planes=None, labels=None, with_recon: bool = True, anchors=None) -> Outputs:
        with precision(self.cfg.precision):
            return self._forward(x, planes, labels, with_recon, anchors)

    def _forward(self, x, planes, labels, with_recon, anchors) -> Outputs:
        planes = self.planes(np.asarray(x)) if planes is None and self.cfg.uses_anchors else planes
        batch = self.tokenize(x, planes, anchors)
        logits = self.backbone(batch.tokens, batch.mask)
        out = Outputs(logits, batch)
        if labels is not None:
            out.task = F.cross_entropy(logits, labels)
        if with_recon and self.decoder is not None:
            recon = self.decoder(batch.tokens, batch.counts, np.asarray(x).shape[-1])
            out.rec = recon_loss(planes, recon)
        return out
