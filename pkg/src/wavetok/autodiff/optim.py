from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    """Moments and hyper-parameters of one Adam optimiser."""

    first: list[np.ndarray]
    second: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not all(0.0 < b < 1.0 for b in betas):
            raise ValueError("betas must lie in (0, 1)")
        return cls(
            first=[np.zeros_like(p.data) for p in params],
            second=[np.zeros_like(p.data) for p in params],
            lr=lr,
            betas=tuple(betas),
            eps=eps,
        )


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``.

    ``None`` gradients count as zero. Any non-finite gradient aborts the
    step before anything is modified.
    """
    if len(params) != len(grads) or len(params) != len(state.first):
        raise ValueError("params, grads and optimiser state disagree in length")
    dense = []
    for p, g in zip(params, grads):
        g = np.zeros_like(p.data) if g is None else g
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite gradient; aborting optimiser step")
        dense.append(g)
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, dense, state.first, state.second):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def cosine_lr(epoch: int, total_epochs: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing from ``lr_max`` at epoch 0 to ``lr_min`` at ``total_epochs``."""
    if total_epochs <= 0:
        return lr_max
    frac = min(max(epoch / total_epochs, 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))


@dataclass
class Adam:
    params: list[Tensor]
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState.for_params(self.params, self.lr, self.betas, self.eps)

    def set_lr(self, lr: float) -> None:
        self.state.lr = lr

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
