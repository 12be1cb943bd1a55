"""Shared test utilities."""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from wavetok.autodiff import Module, Tensor, grad_check


def _owner(module: Module, path: str):
    obj = module
    *parts, leaf = path.split(".")
    for p in parts:
        obj = obj[int(p)] if p.isdigit() else getattr(obj, p)
    return obj, leaf


@contextmanager
def _swapped(module: Module, names: list[str], values: list[Tensor]):
    saved = []
    for name, value in zip(names, values):
        obj, leaf = _owner(module, name)
        saved.append((obj, leaf, getattr(obj, leaf)))
        setattr(obj, leaf, value)
    try:
        yield
    finally:
        for obj, leaf, old in saved:
            setattr(obj, leaf, old)


def param_grad_check(module: Module, loss_fn, names: list[str] | None = None) -> float:
    """Finite-difference check of ``loss_fn()`` w.r.t. module parameters."""
    params = dict(module.named_parameters())
    names = sorted(params) if names is None else names
    base = [np.array(params[n].data, dtype=np.float64) for n in names]

    def fn(*tensors):
        with _swapped(module, names, list(tensors)):
            return loss_fn()

    return grad_check(fn, base)


def tiny_config(variant: str = "full", length: int = 64, n_train: int = 32, n_test: int = 16, **kw):
    """Small, fast configuration on short synthetic signals."""
    from wavetok.trainer import SynthSpec, TrainConfig

    data = SynthSpec(length=length, n_train=n_train, n_test=n_test, duration=(6, 10))
    base = dict(
        variant=variant, detail_dim=8, context_dim=8, heads=2, max_context=16,
        epochs=1, batch_size=8, patch=8, patch_stride=8, data=data,
    )
    base.update(kw)
    return TrainConfig(**base)
