from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, precision


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray | Tensor],
    h: float = 1e-6,
    wrt: Sequence[int] | None = None,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn`` maps tensors to a scalar tensor. Each input is perturbed by
    +-h coordinate-wise; the error per coordinate is
    |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). Always evaluated in float64.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError("step h must lie in [1e-7, 1e-4]")
    with precision("float64"):
        return _grad_check(fn, inputs, h, wrt)


def _grad_check(fn, inputs, h, wrt) -> float:
    base = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
    idx = range(len(base)) if wrt is None else wrt

    leaves = [Tensor(b.copy(), requires_grad=True) for b in base]
    out = fn(*leaves)
    out.backward()
    worst = 0.0
    for i in idx:
        g_ad = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(base[i])
        flat = base[i].reshape(-1)
        g_fd = np.zeros(flat.size)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = fn(*[Tensor(b) for b in base]).item()
            flat[j] = orig - h
            fm = fn(*[Tensor(b) for b in base]).item()
            flat[j] = orig
            g_fd[j] = (fp - fm) / (2 * h)
        ga = g_ad.reshape(-1)
        err = np.abs(ga - g_fd) / np.maximum(1.0, np.maximum(np.abs(ga), np.abs(g_fd)))
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
