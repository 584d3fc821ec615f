"""2-D convolution and transposed convolution via im2col + one GEMM."""
from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import DimensionError, Tensor, record


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def deconv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + k


def _check(op: str, x: Tensor, kernel: Tensor, stride: int, pad: int, in_axis: int) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{op}: input must be [N,C,H,W], got {x.shape}")
    if kernel.ndim != 4:
        raise DimensionError(f"{op}: kernel must be 4-D, got {kernel.shape}")
    if stride < 1:
        raise DimensionError(f"{op}: stride must be >= 1, got {stride}")
    if pad < 0:
        raise DimensionError(f"{op}: pad must be >= 0, got {pad}")
    if x.shape[1] != kernel.shape[in_axis]:
        raise DimensionError(
            f"{op}: input channels (axis 1) = {x.shape[1]} but kernel axis {in_axis} = {kernel.shape[in_axis]}")


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation of ``x`` [N,C,H,W] with ``kernel`` [F,C,kH,kW]."""
    _check("conv2d", x, kernel, stride, pad, in_axis=1)
    n, c, h, w = x.shape
    f, _, kh, kw = kernel.shape
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad} (axes 2,3)")
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    cols = kernels.im2col(x.data, kh, kw, stride, pad)
    wmat = kernel.data.reshape(f, -1)
    out = (wmat @ cols).reshape(f, n, ho, wo)
    if bias is not None:
        out += bias.data.reshape(f, 1, 1, 1)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def vjp(g):
        gmat = np.ascontiguousarray(g[0].transpose(1, 0, 2, 3)).reshape(f, -1)
        gx = kernels.col2im(wmat.T @ gmat, x.shape, kh, kw, stride, pad) if x.requires_grad else None
        gk = (gmat @ cols.T).reshape(kernel.shape) if kernel.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, gmat.sum(axis=1).reshape(bias.shape)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d", inputs, out, vjp)


def deconv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0, bias: Tensor | None = None) -> Tensor:
    """Transposed convolution; ``kernel`` is [C_in, C_out, kH, kW].

    The forward map is exactly the input-gradient of :func:`conv2d` with the
    same kernel, stride and padding.
    """
    _check("deconv2d", x, kernel, stride, pad, in_axis=0)
    n, cin, h, w = x.shape
    _, cout, kh, kw = kernel.shape
    ho, wo = deconv_output_size(h, kh, stride, pad), deconv_output_size(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise DimensionError(f"deconv2d: output size {ho}x{wo} is empty (axes 2,3)")
    wmat = kernel.data.reshape(cin, -1)
    xmat = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(cin, -1)
    out = kernels.col2im(wmat.T @ xmat, (n, cout, ho, wo), kh, kw, stride, pad)
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1)

    def vjp(g):
        gcols = kernels.im2col(g[0], kh, kw, stride, pad)
        gx = None
        if x.requires_grad:
            gx = np.ascontiguousarray((wmat @ gcols).reshape(cin, n, h, w).transpose(1, 0, 2, 3))
        gk = (xmat @ gcols.T).reshape(kernel.shape) if kernel.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, g[0].sum(axis=(0, 2, 3)).reshape(bias.shape)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("deconv2d", inputs, out, vjp)
