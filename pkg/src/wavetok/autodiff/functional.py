"""Differentiable operations on :class:`Tensor`.

Every function accepts tensors or array-likes; array-likes are treated as
constants. Shapes follow numpy conventions (batch axes first, time or
feature axis last) unless stated otherwise.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

import numpy as np

from .tensor import Tensor, _unbroadcast, as_tensor, compute_dtype

COS_EPS = 1e-12


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._make(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._make(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return Tensor._make(ad * bd, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return Tensor._make(out, (a, b), back, "div")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data

    def back(g):
        return (g * exponent * ad ** (exponent - 1),)

    return Tensor._make(ad**exponent, (a,), back, "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return Tensor._make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Tanh-approximated GELU."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    th = x2 * 0.044715
    th += 1.0
    th *= x
    th *= _GELU_C
    np.tanh(th, out=th)
    half = th + 1.0
    half *= 0.5
    out = x * half

    def back(g):
        # d/dx = half + 0.5 x (1 - th^2) c (1 + 3*0.044715 x^2)
        d = th * th
        np.subtract(1.0, d, out=d)
        d *= x
        d *= 0.5 * _GELU_C
        x2s = x2 * 0.134145
        x2s += 1.0
        d *= x2s
        d += half
        d *= g
        return (d,)

    return Tensor._make(out, (a,), back, "gelu")


def where(mask, a, b) -> Tensor:
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    m = np.asarray(mask, dtype=bool)
    out = np.where(m, a.data, b.data)

    def back(g):
        return (
            _unbroadcast(np.where(m, g, 0.0), a.shape),
            _unbroadcast(np.where(m, 0.0, g), b.shape),
        )

    return Tensor._make(out, (a, b), back, "where")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return Tensor._make(out, (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return sum(a, axis=axes, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    inv = tuple(np.argsort(axes))
    return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic_index(index)

    def back(g):
        full = np.zeros(shape, dtype=a.data.dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor._make(a.data[index], (a,), back, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    axis = axis % ts[0].ndim
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in ts], axis=axis), ts, back, "concat")


def pad_last(a, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    a = as_tensor(a)
    n = a.shape[-1]
    width = [(0, 0)] * (a.ndim - 1) + [(left, right)]
    return Tensor._make(np.pad(a.data, width), (a,), lambda g: (g[..., left : left + n],), "pad")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul expects operands with at least 2 dimensions")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(
            f"matmul inner dimension mismatch: {ad.shape[-1]} vs {bd.shape[-2]}"
        )
    if bd.ndim == 2 and ad.ndim > 2:
        return _matmul_shared(a, b)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), back, "matmul")


def _matmul_shared(a: Tensor, b: Tensor) -> Tensor:
    # (..., n, m) @ (m, p) as one flat GEMM
    ad, bd = a.data, b.data
    lead = ad.shape[:-1]
    flat = ad.reshape(-1, ad.shape[-1])
    out = (flat @ bd).reshape(*lead, bd.shape[-1])

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
        gb = flat.T @ g2 if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), back, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` over the last axis; ``weight`` is (in, out)."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def time_map(x, matrix: np.ndarray, axis: int = -1) -> Tensor:
    """Apply a constant linear map ``matrix`` (T_in, T_out) along ``axis``."""
    x = as_tensor(x)
    axis = axis % x.ndim
    m = np.asarray(matrix, dtype=x.data.dtype)
    if x.shape[axis] != m.shape[0]:
        raise ValueError(f"time axis length {x.shape[axis]} does not match map rows {m.shape[0]}")
    moved = np.moveaxis(x.data, axis, -1)
    out = np.moveaxis(moved @ m, -1, axis)

    def back(g):
        gm = np.moveaxis(g, axis, -1) @ m.T
        return (np.moveaxis(gm, -1, axis),)

    return Tensor._make(out, (x,), back, "time_map")


# ---------------------------------------------------------------------------
# normalisation / probabilities
# ---------------------------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    out = a.data - a.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def back(g):
        res = g - np.expand_dims(np.einsum("...i,...i->...", np.moveaxis(g, axis, -1), np.moveaxis(out, axis, -1)), axis)
        res *= out
        return (res,)

    return Tensor._make(out, (a,), back, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def back(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (a,), back, "log_softmax")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` (N, K)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    n = logp.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def back(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return Tensor._make(loss, (logits,), back, "cross_entropy")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data
    n = xd.shape[-1]

    def back(g):
        gg = _unbroadcast(g * xhat, gain.shape) if gain.requires_grad else None
        gb = _unbroadcast(g, bias.shape) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv / n * (n * gh - gh.sum(-1, keepdims=True) - xhat * (gh * xhat).sum(-1, keepdims=True))
        return gx, gg, gb

    return Tensor._make(out, (x, gain, bias), back, "layer_norm")


def cosine_similarity(u, v, axis: int = -1) -> Tensor:
    """u.v / (|u||v| + 1e-12) along ``axis``; zero when both norms vanish."""
    u, v = as_tensor(u), as_tensor(v)
    ud, vd = u.data, v.data
    dot = (ud * vd).sum(axis=axis, keepdims=True)
    nu = np.sqrt((ud * ud).sum(axis=axis, keepdims=True))
    nv = np.sqrt((vd * vd).sum(axis=axis, keepdims=True))
    den = nu * nv + COS_EPS
    out = dot / den

    def back(g):
        g = np.expand_dims(g, axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            ru = np.where(nu > 0, nv / nu, 0.0)
            rv = np.where(nv > 0, nu / nv, 0.0)
        scale = g / den
        shrink = scale * dot / den
        gu = scale * vd - (shrink * ru) * ud if u.requires_grad else None
        gv = scale * ud - (shrink * rv) * vd if v.requires_grad else None
        return gu, gv

    return Tensor._make(np.squeeze(out, axis=axis), (u, v), back, "cosine")


# ---------------------------------------------------------------------------
# temporal operators
# ---------------------------------------------------------------------------

def _same_padding(k: int) -> tuple[int, int]:
    return k // 2, (k - 1) // 2


def _im2col(xp: np.ndarray, k: int) -> np.ndarray:
    """(..., C, Lp) -> (..., C*k, Lp-k+1) sliding windows, channel-major.

    Built from k contiguous slice copies so the matmuls below need no
    transposes."""
    lout = xp.shape[-1] - k + 1
    cols = np.empty(xp.shape[:-1] + (k, lout), dtype=xp.dtype)
    for l in range(k):
        cols[..., l, :] = xp[..., l : l + lout]
    return cols.reshape(*xp.shape[:-2], xp.shape[-2] * k, lout)


def conv1d(x, kernels, bias=None, padding: str = "same") -> Tensor:
    """Cross-correlation over the last axis.

    ``x`` is (..., Cin, L) and ``kernels`` is (Cout, Cin, k). With "same"
    padding the input is zero-padded by k//2 on the left and (k-1)//2 on
    the right, so the output keeps length L. "valid" gives L-k+1.
    """
    x, w = as_tensor(x), as_tensor(kernels)
    xd, wd = x.data, w.data
    if xd.ndim < 2:
        raise ValueError("conv1d input must have at least 2 dims (Cin, L)")
    if wd.ndim != 3:
        raise ValueError("conv1d kernels must be (Cout, Cin, k)")
    cout, cin, k = wd.shape
    if xd.shape[-2] != cin:
        raise ValueError(f"conv1d input channels mismatch: input has {xd.shape[-2]}, kernels expect {cin}")
    if padding == "same":
        left, right = _same_padding(k)
    elif padding == "valid":
        left = right = 0
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    length = xd.shape[-1]
    xp = np.pad(xd, [(0, 0)] * (xd.ndim - 1) + [(left, right)])
    lout = xp.shape[-1] - k + 1
    if lout < 1:
        raise ValueError(f"conv1d input length {length} too short for kernel {k}")
    cols = _im2col(xp, k)
    out = wd.reshape(cout, cin * k) @ cols
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None]

    def back(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = g.reshape(-1, cout, lout) @ np.swapaxes(cols.reshape(-1, cin * k, lout), -1, -2)
            gw = gw.sum(axis=0).reshape(cout, cin, k)
        if x.requires_grad:
            # input gradient = valid correlation of the zero-extended output
            # gradient with the channel-swapped, time-flipped kernels
            gpad = np.pad(g, [(0, 0)] * (g.ndim - 1) + [(k - 1, k - 1)])
            gpad = gpad[..., left : left + length + k - 1]
            wflip = wd[:, :, ::-1].transpose(1, 0, 2).reshape(cin, cout * k)
            gx = wflip @ _im2col(gpad, k)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=tuple(range(g.ndim - 2)) + (g.ndim - 1,))
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._make(out, parents, back, "conv1d")


def conv1d_transpose(x, kernels, bias=None, stride: int = 1) -> Tensor:
    """Fractionally strided convolution over the last axis.

    ``x`` is (..., Cin, T) and ``kernels`` is (Cin, Cout, k). Input step t
    scatters ``x[i, t] * kernels[i, o, l]`` into output position
    ``t * stride + l``. The result is trimmed (or zero-extended) on the
    trailing side to exactly ``stride * T``.
    """
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    x, w = as_tensor(x), as_tensor(kernels)
    xd, wd = x.data, w.data
    cin, cout, k = wd.shape
    if xd.shape[-2] != cin:
        raise ValueError(f"conv1d_transpose input channels mismatch: {xd.shape[-2]} vs {cin}")
    steps = xd.shape[-1]
    out_len = stride * steps
    lead = xd.shape[:-2]
    # contrib[..., o, t, l]
    contrib = np.einsum("...it,iol->...otl", xd, wd, optimize=True)
    full = np.zeros(lead + (cout, (steps - 1) * stride + k), dtype=contrib.dtype)
    for l in range(k):
        full[..., l : l + stride * (steps - 1) + 1 : stride] += contrib[..., l]
    if full.shape[-1] >= out_len:
        out = full[..., :out_len]
    else:
        out = np.pad(full, [(0, 0)] * (full.ndim - 1) + [(0, out_len - full.shape[-1])])
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None]

    def back(g):
        gfull = np.zeros(full.shape, dtype=full.dtype)
        n = min(out_len, full.shape[-1])
        gfull[..., :n] = g[..., :n]
        gcontrib = np.empty(lead + (cout, steps, k), dtype=full.dtype)
        for l in range(k):
            gcontrib[..., l] = gfull[..., l : l + stride * (steps - 1) + 1 : stride]
        gx = np.einsum("...otl,iol->...it", gcontrib, wd, optimize=True) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = np.einsum("...it,...otl->iol", xd, gcontrib, optimize=True)
        if bias is None:
            return gx, gw
        gb = g.sum(axis=tuple(range(g.ndim - 2)) + (g.ndim - 1,))
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._make(out, parents, back, "conv1d_transpose")


@lru_cache(maxsize=512)
def resample_matrix(length: int, target: int) -> np.ndarray:
    """Constant (length, target) map used by :func:`resample`.

    Upsampling interpolates linearly with both endpoints aligned;
    downsampling averages contiguous bins with boundaries floor(i*T/target).
    """
    if length < 1 or target < 1:
        raise ValueError("resample lengths must be positive")
    m = np.zeros((length, target))
    if target == length:
        np.fill_diagonal(m, 1.0)
    elif target > length:
        if length == 1:
            m[0, :] = 1.0
        else:
            pos = np.arange(target) * (length - 1) / (target - 1)
            lo = np.minimum(np.floor(pos).astype(int), length - 2)
            frac = pos - lo
            cols = np.arange(target)
            m[lo, cols] += 1.0 - frac
            m[lo + 1, cols] += frac
    else:
        edges = (np.arange(target + 1) * length) // target
        for i in range(target):
            a, b = edges[i], edges[i + 1]
            m[a:b, i] = 1.0 / (b - a)
    m.setflags(write=False)
    return m


def resample(x, target_len: int, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    length = x.shape[axis]
    if target_len == length:
        return x
    return time_map(x, resample_matrix(length, target_len), axis=axis)


def resample_prefix(x, lengths, target_len: int) -> Tensor:
    """Resample the first ``lengths[i]`` steps of row i of ``x`` (B, ..., T) to ``target_len``.

    Steps past a row's length are ignored. Rows sharing a length go
    through one product.
    """
    x = as_tensor(x)
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (x.shape[0],):
        raise ValueError(f"need one length per row, got {lengths.shape} for {x.shape[0]} rows")
    if np.any(lengths < 1) or np.any(lengths > x.shape[-1]):
        raise ValueError(f"prefix lengths must lie in [1, {x.shape[-1]}]")
    groups = [(n, np.flatnonzero(lengths == n)) for n in np.unique(lengths)]
    dtype = x.data.dtype
    out = np.empty(x.shape[:-1] + (target_len,), dtype=dtype)
    for n, rows in groups:
        out[rows] = x.data[rows, ..., :n] @ resample_matrix(int(n), target_len).astype(dtype, copy=False)

    def back(g):
        gx = np.zeros(x.shape, dtype=dtype)
        for n, rows in groups:
            gx[rows, ..., :n] = g[rows] @ resample_matrix(int(n), target_len).T.astype(dtype, copy=False)
        return (gx,)

    return Tensor._make(out, (x,), back, "resample_prefix")


@lru_cache(maxsize=512)
def avg_pool_matrix(length: int, stride: int) -> np.ndarray:
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    n_out = -(-length // stride)
    m = np.zeros((length, n_out))
    for i in range(n_out):
        a, b = i * stride, min((i + 1) * stride, length)
        m[a:b, i] = 1.0 / (b - a)
    m.setflags(write=False)
    return m


def avg_pool1d(x, stride: int, axis: int = -1) -> Tensor:
    """Non-overlapping window means; the final window may be short."""
    x = as_tensor(x)
    if stride == 1:
        return x
    return time_map(x, avg_pool_matrix(x.shape[axis], stride), axis=axis)


__all__ = [
    "COS_EPS",
    "add",
    "avg_pool1d",
    "avg_pool_matrix",
    "concat",
    "conv1d",
    "conv1d_transpose",
    "cosine_similarity",
    "cross_entropy",
    "div",
    "exp",
    "gelu",
    "getitem",
    "layer_norm",
    "linear",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "pad_last",
    "power",
    "reshape",
    "resample",
    "resample_matrix",
    "softmax",
    "sqrt",
    "sub",
    "sum",
    "swapaxes",
    "tanh",
    "time_map",
    "transpose",
    "where",
]
