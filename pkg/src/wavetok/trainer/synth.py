"""Synthetic event signals: a noise floor with class-specific motif bursts
separated by quiescent gaps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SynthSpec


@dataclass
class Dataset:
    x: np.ndarray  # (N, C, L)
    y: np.ndarray  # (N,)
    classes: int

    def __len__(self) -> int:
        return len(self.y)

    @property
    def channels(self) -> int:
        return self.x.shape[1]

    @property
    def length(self) -> int:
        return self.x.shape[2]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.classes)


def motif(kind: str, duration: int, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(duration, dtype=np.float64)
    if kind == "square":
        return np.full(duration, amplitude)
    if kind == "damped_sine":
        freq = rng.uniform(0.08, 0.15)
        return amplitude * np.exp(-3.0 * t / duration) * np.sin(2 * np.pi * freq * t)
    if kind == "chirp":
        f0, f1 = 0.01, rng.uniform(0.2, 0.3)
        phase = 2 * np.pi * (f0 * t + (f1 - f0) * t * t / (2 * duration))
        return amplitude * np.sin(phase)
    raise ValueError(f"unknown motif {kind!r}")


def _render(signature: list[str], spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    length, channels = spec.length, spec.channels
    lo, hi = spec.duration
    durations = rng.integers(lo, hi + 1, size=len(signature))
    min_gap = int(spec.gap_fraction * length / (len(signature) + 1))
    slack = length - durations.sum() - min_gap * (len(signature) + 1)
    if slack < 0:
        raise ValueError(f"motifs of total length {durations.sum()} plus gaps do not fit in L={length}")
    gaps = min_gap + np.floor(rng.dirichlet(np.ones(len(signature) + 1)) * slack).astype(int)
    out = rng.normal(0.0, spec.noise_std, size=(channels, length)) if spec.noise_std > 0 else np.zeros((channels, length))
    gains = rng.uniform(0.5, 1.0, size=channels)
    pos = 0
    for kind, dur, gap in zip(signature, durations, gaps):
        pos += gap
        wave = motif(kind, int(dur), rng.uniform(*spec.amplitude), rng)
        out[:, pos : pos + dur] += gains[:, None] * wave
        pos += dur
    return out


def gen_synthetic(spec: SynthSpec, n: int | None = None, seed: int | None = None) -> Dataset:
    """Balanced dataset of ``n`` samples (default ``spec.n_train``)."""
    spec.validate()
    n = spec.n_train if n is None else n
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    signatures = spec.class_signatures()
    labels = rng.permutation(np.arange(n) % spec.classes)
    x = np.zeros((n, spec.channels, spec.length))
    for i, label in enumerate(labels):
        x[i] = _render(signatures[label], spec, rng)
    return Dataset(x, labels.astype(np.int64), spec.classes)


def train_test(spec: SynthSpec) -> tuple[Dataset, Dataset]:
    """Independent train and test draws derived from ``spec.seed``."""
    seeds = np.random.SeedSequence(spec.seed).generate_state(2)
    train = gen_synthetic(spec, spec.n_train, int(seeds[0]))
    test = gen_synthetic(spec, spec.n_test, int(seeds[1]))
    return train, test
