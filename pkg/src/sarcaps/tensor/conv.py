"""Valid 2-D convolution and its transpose on NHWC tensors.

Kernels are laid out ``(k, k, C_in, C_out)`` for :func:`conv2d` and
``(k, k, C_out, C_in)`` for :func:`conv_transpose2d`, so the same kernel array
makes the two ops adjoint to each other. Unbatched ``(H, W, C)`` inputs are
accepted and returned unbatched.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ops
from .core import Tensor, make_result

# im2col is used while the patch matrix stays under this many elements;
# beyond that we accumulate one matmul per kernel tap to bound memory.
IM2COL_LIMIT = 1 << 24


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def _tap(arr: np.ndarray, di: int, dj: int, stride: int, ho: int, wo: int) -> np.ndarray:
    return arr[:, di:di + stride * (ho - 1) + 1:stride, dj:dj + stride * (wo - 1) + 1:stride, :]


def _patches(x: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # (N, Ho, Wo, C, k, k) -> (N*Ho*Wo, k*k*C) ordered like the kernel's first three axes
    n, _, _, c = x.shape
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)


def _use_im2col(n, ho, wo, k, c) -> bool:
    return n * ho * wo * k * k * c <= IM2COL_LIMIT


def conv_valid(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    n, h, wd, c = x.shape
    k, _, _, o = w.shape
    ho, wo = conv_output_size(h, k, stride), conv_output_size(wd, k, stride)
    if _use_im2col(n, ho, wo, k, c):
        cols = _patches(x, k, stride, ho, wo)
        return (cols @ w.reshape(k * k * c, o)).reshape(n, ho, wo, o)
    out = np.zeros((n, ho, wo, o), dtype=x.dtype)
    flat = out.reshape(-1, o)
    for di in range(k):
        for dj in range(k):
            flat += _tap(x, di, dj, stride, ho, wo).reshape(-1, c) @ w[di, dj]
    return out


def conv_input_adjoint(g: np.ndarray, w: np.ndarray, stride: int, in_hw: tuple) -> np.ndarray:
    """Gradient of :func:`conv_valid` w.r.t. its input (also the transposed-conv forward)."""
    n, ho, wo, o = g.shape
    k, _, c, _ = w.shape
    out = np.zeros((n, in_hw[0], in_hw[1], c), dtype=g.dtype)
    g2 = g.reshape(-1, o)
    if _use_im2col(n, ho, wo, k, c):
        dcols = (g2 @ w.reshape(k * k * c, o).T).reshape(n, ho, wo, k, k, c)
        for di in range(k):
            for dj in range(k):
                _tap(out, di, dj, stride, ho, wo)[...] += dcols[:, :, :, di, dj, :]
        return out
    for di in range(k):
        for dj in range(k):
            _tap(out, di, dj, stride, ho, wo)[...] += (g2 @ w[di, dj].T).reshape(n, ho, wo, c)
    return out


def conv_kernel_grad(x: np.ndarray, g: np.ndarray, k: int, stride: int) -> np.ndarray:
    n, _, _, c = x.shape
    _, ho, wo, o = g.shape
    g2 = g.reshape(-1, o)
    if _use_im2col(n, ho, wo, k, c):
        return (_patches(x, k, stride, ho, wo).T @ g2).reshape(k, k, c, o)
    dw = np.empty((k, k, c, o), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            dw[di, dj] = _tap(x, di, dj, stride, ho, wo).reshape(-1, c).T @ g2
    return dw


def _batched(x: Tensor):
    if x.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected (H, W, C) or (N, H, W, C) input, got {x.shape}")
    return x, False


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    if padding != "valid":
        raise ValueError("only 'valid' padding is supported; use ops.pad2d explicitly")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    x4, squeeze = _batched(x)
    k, k2, cin, _ = kernels.shape
    _, h, w, c = x4.shape
    if k != k2:
        raise ValueError("kernels must be square")
    if c != cin:
        raise ValueError(f"input has {c} channels, kernels expect {cin}")
    if k > h or k > w:
        raise ValueError(f"kernel {k}x{k} larger than input {h}x{w}")
    xd, wd = x4.data, kernels.data

    def bw(g):
        return (conv_input_adjoint(g, wd, stride, (h, w)) if x4.requires_grad else None,
                conv_kernel_grad(xd, g, k, stride) if kernels.requires_grad else None)

    out = make_result(conv_valid(xd, wd, stride), (x4, kernels), "conv2d", bw)
    return ops.reshape(out, out.shape[1:]) if squeeze else out


def conv_transpose2d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Output spatial size is ``(H - 1) * stride + k``; crop separately if needed."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    x4, squeeze = _batched(x)
    k, _, _, cin = kernels.shape
    n, h, w, c = x4.shape
    if c != cin:
        raise ValueError(f"input has {c} channels, kernels expect {cin}")
    out_hw = ((h - 1) * stride + k, (w - 1) * stride + k)
    xd, wd = x4.data, kernels.data

    def bw(g):
        dx = conv_valid(g, wd, stride) if x4.requires_grad else None
        # the roles of input and output swap relative to conv2d
        dw = conv_kernel_grad(g, xd, k, stride) if kernels.requires_grad else None
        return dx, dw

    out = make_result(conv_input_adjoint(xd, wd, stride, out_hw), (x4, kernels),
                      "conv_transpose2d", bw)
    return ops.reshape(out, out.shape[1:]) if squeeze else out
