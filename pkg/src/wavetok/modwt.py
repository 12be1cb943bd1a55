"""Maximal overlap (undecimated) discrete wavelet transform.

Filters use the MODWT convention: the orthonormal DWT filters divided by
sqrt(2). Level j applies the base filters upsampled by 2**(j-1) to the
previous approximation with periodic boundary, so every coefficient plane
keeps the input length.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# Orthonormal Daubechies scaling filter with 4 vanishing moments (8 taps).
_DB4_SCALING = np.array(
    [
        0.2303778133088965,
        0.7148465705529157,
        0.6308807679298589,
        -0.027983769416859854,
        -0.18703481171909309,
        0.030841381835560764,
        0.0328830116668852,
        -0.010597401785069032,
    ]
)
_HAAR_SCALING = np.array([1.0, 1.0]) / np.sqrt(2.0)

_BASES = {"haar": _HAAR_SCALING, "db4": _DB4_SCALING}


@dataclass(frozen=True)
class FilterPair:
    name: str
    h: np.ndarray  # rescaled wavelet (high-pass) filter
    g: np.ndarray  # rescaled scaling (low-pass) filter

    @property
    def length(self) -> int:
        return len(self.g)

    def check(self, tol: float = 1e-12) -> None:
        h, g, k = self.h, self.g, len(self.g)
        if abs(h.sum()) > tol:
            raise ValueError(f"{self.name}: wavelet filter does not sum to 0")
        if abs(g.sum() - 1.0) > tol:
            raise ValueError(f"{self.name}: scaling filter does not sum to 1")
        if abs((h * h).sum() - 0.5) > tol or abs((g * g).sum() - 0.5) > tol:
            raise ValueError(f"{self.name}: filters do not have energy 1/2")
        qmf = np.array([(-1) ** l * g[k - 1 - l] for l in range(k)])
        if np.max(np.abs(qmf - h)) > tol:
            raise ValueError(f"{self.name}: quadrature-mirror relation violated")


def wavelet_filters(name: str) -> FilterPair:
    try:
        scaling = _BASES[name]
    except KeyError:
        raise ValueError(f"unknown wavelet basis {name!r}; expected one of {sorted(_BASES)}") from None
    g = scaling / np.sqrt(2.0)
    k = len(g)
    h = np.array([(-1) ** l * g[k - 1 - l] for l in range(k)])
    pair = FilterPair(name, h, g)
    pair.check()
    return pair


def _as_filters(basis: FilterPair | str) -> FilterPair:
    return wavelet_filters(basis) if isinstance(basis, str) else basis


@dataclass
class WaveletStack:
    details: list[np.ndarray]  # J arrays, each (..., C, L)
    approximation: np.ndarray
    basis: str

    @property
    def levels(self) -> int:
        return len(self.details)

    def to_array(self) -> np.ndarray:
        """Stack as (J+1, ..., C, L) ordered dX_1..dX_J, A."""
        return np.stack([*self.details, self.approximation], axis=0)

    @classmethod
    def from_array(cls, planes: np.ndarray, basis: str) -> "WaveletStack":
        planes = np.asarray(planes, dtype=np.float64)
        if planes.shape[0] < 2:
            raise ValueError("a wavelet stack needs at least one detail plane and the approximation")
        return cls([p for p in planes[:-1]], planes[-1], basis)


def _circular_filter(x: np.ndarray, taps: np.ndarray, dilation: int) -> np.ndarray:
    # out[t] = sum_l taps[l] * x[(t - dilation*l) mod L]
    out = np.zeros_like(x)
    for l, c in enumerate(taps):
        out += c * np.roll(x, dilation * l, axis=-1)
    return out


def _circular_filter_adjoint(x: np.ndarray, taps: np.ndarray, dilation: int) -> np.ndarray:
    # out[t] = sum_l taps[l] * x[(t + dilation*l) mod L]
    out = np.zeros_like(x)
    for l, c in enumerate(taps):
        out += c * np.roll(x, -dilation * l, axis=-1)
    return out


def modwt(x, levels: int = 4, basis: FilterPair | str = "db4") -> WaveletStack:
    """Decompose ``x`` (..., L) into ``levels`` detail planes and one approximation."""
    x = np.asarray(x, dtype=np.float64)
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    length = x.shape[-1]
    if length < 2:
        raise ValueError(f"signal length must be >= 2, got {length}")
    if 2**levels > length:
        warnings.warn(f"2**{levels} exceeds signal length {length}; coarse levels wrap heavily", stacklevel=2)
    filt = _as_filters(basis)
    approx = x
    details = []
    for j in range(1, levels + 1):
        dil = 2 ** (j - 1)
        details.append(_circular_filter(approx, filt.h, dil))
        approx = _circular_filter(approx, filt.g, dil)
    return WaveletStack(details, approx, filt.name)


def imodwt(stack: WaveletStack, basis: FilterPair | str | None = None) -> np.ndarray:
    """Inverse pyramid; reconstructs the signal from its MODWT."""
    filt = _as_filters(basis if basis is not None else stack.basis)
    if basis is not None and filt.name != stack.basis:
        raise ValueError(f"stack was produced with {stack.basis!r}, not {filt.name!r}")
    if stack.levels < 1:
        raise ValueError("stack has no detail levels")
    approx = np.asarray(stack.approximation, dtype=np.float64)
    for j in range(stack.levels, 0, -1):
        detail = np.asarray(stack.details[j - 1], dtype=np.float64)
        if detail.shape != approx.shape:
            raise ValueError(f"level {j} shape {detail.shape} does not match approximation {approx.shape}")
        dil = 2 ** (j - 1)
        approx = _circular_filter_adjoint(detail, filt.h, dil) + _circular_filter_adjoint(approx, filt.g, dil)
    return approx


@dataclass
class StreamSplit:
    detail_stream: np.ndarray  # (..., C, K+1, L): X, dX_1..dX_K
    context_stream: np.ndarray  # (..., C, J+1-K, L): dX_{K+1}..dX_J, A
    partition: int


def partition_streams(x, stack: WaveletStack, partition: int = 1) -> StreamSplit:
    x = np.asarray(x, dtype=np.float64)
    j = stack.levels
    if not 1 <= partition <= j:
        raise ValueError(f"partition index must be in [1, {j}], got {partition}")
    detail = np.stack([x, *stack.details[:partition]], axis=-2)
    context = np.stack([*stack.details[partition:], stack.approximation], axis=-2)
    return StreamSplit(detail, context, partition)
