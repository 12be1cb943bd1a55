"""Training-only decoder from tokens back to the wavelet stack."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Linear, Module, Tensor, parameter
from .autodiff import functional as F

DEFAULT_LAMBDA = 0.1


class Decoder(Module):
    def __init__(
        self,
        dim: int,
        levels: int,
        channels: int,
        rng: np.random.Generator,
        stride: int = 4,
        kernel: int = 8,
    ):
        self.levels, self.channels = levels, channels
        self.stride = stride
        planes = (levels + 1) * channels
        self.lift = Linear(dim, planes, rng)
        bound = 1.0 / math.sqrt(planes * kernel / stride)
        self.kernels = parameter(rng.uniform(-bound, bound, size=(planes, planes, kernel)))
        self.bias = parameter(np.zeros(planes))

    def __call__(self, tokens: Tensor, counts, length: int) -> Tensor:
        """Decode (B, K, d) padded tokens into (B, J+1, C, L).

        ``counts`` gives the real token count per row. Padded slots are
        zeroed before the transposed convolution, so they only touch
        output steps past ``stride * count``, which the per-row resample
        discards.
        """
        counts = np.asarray(counts, dtype=np.int64)
        b, k, _ = tokens.shape
        if np.any(counts < 1) or np.any(counts > k):
            raise ValueError("token counts must lie in [1, K]")
        valid = (np.arange(k)[None, :] < counts[:, None]).astype(np.float64)[..., None]
        lifted = self.lift(tokens) * valid  # (B, K, P)
        expanded = F.conv1d_transpose(F.swapaxes(lifted, -1, -2), self.kernels, self.bias, self.stride)
        planes = F.resample_prefix(expanded, self.stride * counts, length)  # (B, P, L)
        return planes.reshape(b, self.levels + 1, self.channels, length)


def recon_loss(target, reconstruction: Tensor) -> Tensor:
    """Mean squared error over every coefficient of the (J+1, C, L) stack."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != reconstruction.shape:
        raise ValueError(f"target {target.shape} and reconstruction {reconstruction.shape} differ")
    diff = reconstruction - target
    return F.mean(diff * diff)


def total_loss(task: Tensor, rec: Tensor, weight: float = DEFAULT_LAMBDA) -> Tensor:
    if weight < 0:
        raise ValueError("reconstruction weight must be non-negative")
    return task + rec * weight
