"""Differentiable elementwise, reduction, shape and linear-algebra ops.

Binary ops require identical shapes. The only implicit broadcasting is by a
Python scalar (``scale`` / ``shift``); anything else goes through
:func:`broadcast_to` explicitly.
"""

from __future__ import annotations

import numpy as np

from .core import Tensor, make_result

ELEMENTWISE_KINDS = ("add", "sub", "mul", "scale", "relu", "sigmoid", "tanh")


def _same_shape(op, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- binary elementwise ---------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return make_result(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return make_result(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), "mul", lambda g: (g * bd, g * ad))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd
    return make_result(out, (a, b), "div", lambda g: (g / bd, -g * ad / (bd * bd)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_result(a.data * a.dtype.type(c), (a,), "scale", lambda g: (g * a.dtype.type(c),))


def shift(a: Tensor, c: float) -> Tensor:
    return make_result(a.data + a.dtype.type(c), (a,), "shift", lambda g: (g,))


# -- unary elementwise ----------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(np.where(mask, a.data, 0).astype(a.dtype), (a,), "relu",
                       lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    s = a.dtype.type(slope)
    factor = np.where(a.data > 0, a.dtype.type(1), s)
    return make_result(a.data * factor, (a,), "leaky_relu", lambda g: (g * factor,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return make_result(y, (a,), "sigmoid", lambda g: (g * y * (1 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return make_result(y, (a,), "tanh", lambda g: (g * (1 - y * y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return make_result(y, (a,), "exp", lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise ValueError("log of non-positive value")
    return make_result(np.log(x), (a,), "log", lambda g: (g / x,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return make_result(y, (a,), "sqrt", lambda g: (g / (2 * y),))


def square(a: Tensor) -> Tensor:
    x = a.data
    return make_result(x * x, (a,), "square", lambda g: (2 * g * x,))


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch one of :data:`ELEMENTWISE_KINDS`; ``scale`` takes a scalar ``b``."""
    if kind in ("add", "sub", "mul"):
        if not isinstance(b, Tensor):
            raise ValueError(f"{kind} needs a second tensor")
        return {"add": add, "sub": sub, "mul": mul}[kind](a, b)
    if kind == "scale":
        return scale(a, b)
    if kind in ("relu", "sigmoid", "tanh"):
        return {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}[kind](a)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# -- reductions and shape -------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out, dtype=a.dtype), (a,), "sum", bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return scale(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return make_result(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(a.data.transpose(axes)), (a,), "transpose",
                       lambda g: (g.transpose(inv),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit numpy-style broadcast; the backward sums over expanded axes."""
    shape = tuple(shape)
    src = a.shape
    lead = len(shape) - len(src)

    def bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return make_result(np.broadcast_to(a.data, shape).copy(), (a,), "broadcast_to", bw)


def index(a: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing."""
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return make_result(np.array(a.data[idx]), (a,), "index", bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat",
                       lambda g: tuple(np.split(g, cuts, axis=axis)))


def pad2d(a: Tensor, pad: int) -> Tensor:
    """Zero-pad the two spatial axes of an NHWC tensor by ``pad`` on each side."""
    if pad == 0:
        return a
    width = [(0, 0), (pad, pad), (pad, pad), (0, 0)]
    return make_result(np.pad(a.data, width), (a,), "pad2d",
                       lambda g: (g[:, pad:-pad, pad:-pad, :],))


def center_crop2d(a: Tensor, height: int, width: int) -> Tensor:
    """Crop the spatial axes of an NHWC tensor to ``height`` x ``width`` around the center."""
    _, h, w, _ = a.shape
    if height > h or width > w:
        raise ValueError(f"cannot crop {h}x{w} to {height}x{width}")
    top, left = (h - height) // 2, (w - width) // 2
    return index(a, (slice(None), slice(top, top + height), slice(left, left + width), slice(None)))


# -- linear algebra -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return make_result(ad @ bd, (a, b), "matmul", lambda g: (g @ bd.T, ad.T @ g))


def einsum(subscripts: str, *operands: Tensor) -> Tensor:
    """Differentiable ``np.einsum`` with an explicit ``->`` output.

    Repeated indices inside a single operand (diagonals) are not supported.
    """
    if "->" not in subscripts:
        raise ValueError("einsum needs an explicit output, e.g. 'ij,jk->ik'")
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(operands):
        raise ValueError("einsum: operand count does not match subscripts")
    for s in in_subs:
        if len(set(s)) != len(s):
            raise ValueError(f"einsum: repeated index in {s!r} is not supported")
    datas = [t.data for t in operands]
    out = np.einsum(subscripts, *datas, optimize=True)

    def bw(g):
        grads = []
        for i, (sub_i, t) in enumerate(zip(in_subs, operands)):
            if not t.requires_grad:
                grads.append(None)
                continue
            others = [s for j, s in enumerate(in_subs) if j != i]
            keep = "".join(c for c in sub_i if c in out_sub or any(c in s for s in others))
            expr = ",".join([out_sub] + others) + "->" + keep
            gi = np.einsum(expr, g, *[d for j, d in enumerate(datas) if j != i], optimize=True)
            if keep != sub_i:
                shape = [t.shape[k] if c in keep else 1 for k, c in enumerate(sub_i)]
                order = [keep.index(c) for c in sub_i if c in keep]
                gi = np.broadcast_to(gi.transpose(order).reshape(shape), t.shape).copy()
            grads.append(gi)
        return grads

    return make_result(np.asarray(out, dtype=operands[0].dtype), operands, "einsum", bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return make_result(y, (x,), "softmax",
                       lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for a batch ``x`` of shape (N, fan_in)."""
    y = matmul(x, weight)
    return add(y, broadcast_to(bias, y.shape))


def bce_with_logits(logits: Tensor, target: float) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against a constant label."""
    x = logits.data
    y = logits.dtype.type(target)
    loss = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    n = x.size
    value = np.asarray(loss.mean(), dtype=logits.dtype)
    return make_result(value, (logits,), "bce_with_logits",
                       lambda g: (g * (_sigmoid(x) - y) / n,))


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel mean/variance normalization over the spatial axes of NHWC."""
    mu = broadcast_to(mean(x, axis=(1, 2), keepdims=True), x.shape)
    xc = sub(x, mu)
    var = mean(square(xc), axis=(1, 2), keepdims=True)
    return div(xc, broadcast_to(sqrt(shift(var, eps)), x.shape))

