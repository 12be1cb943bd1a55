"""Minimal numpy-backed reverse-mode differentiation."""

from . import functional
from .gradcheck import grad_check
from .nn import MLP, AttentionBlock, Conv1d, LayerNorm, Linear, Module, parameter, sinusoidal_encoding
from .optim import Adam, AdamState, NonFiniteGradientError, adam_step, cosine_lr
from .tensor import PRECISIONS, GraphCycleError, Tensor, as_tensor, compute_dtype, no_grad, precision, tensor

__all__ = [
    "Adam",
    "AdamState",
    "AttentionBlock",
    "Conv1d",
    "GraphCycleError",
    "LayerNorm",
    "Linear",
    "MLP",
    "Module",
    "NonFiniteGradientError",
    "PRECISIONS",
    "Tensor",
    "adam_step",
    "as_tensor",
    "compute_dtype",
    "cosine_lr",
    "functional",
    "grad_check",
    "no_grad",
    "parameter",
    "precision",
    "sinusoidal_encoding",
    "tensor",
]
