"""Pure-numpy im2col / col2im. Reference backend and fallback for the compiled core.

Column layout shared with the compiled kernels: ``cols[c*kh*kw + i*kw + j, n*Ho*Wo + y*Wo + x]``
holds ``xpad[n, c, y*stride + i, x*stride + j]``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        x = np.ascontiguousarray(x)
    sn, sc, sh, sw = x.strides
    view = as_strided(
        x,
        shape=(c, kh, kw, n, ho, wo),
        strides=(sc, sh, sw, sn, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(c * kh * kw, n * ho * wo)


def col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back into an image of ``shape``.

    Contributions to one pixel are summed in (i, j) kernel order; the compiled
    kernel keeps the same order so both backends agree bitwise.
    """
    n, c, h, w = shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols6 = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        ys = slice(i, i + stride * ho, stride)
        for j in range(kw):
            xs = slice(j, j + stride * wo, stride)
            out[:, :, ys, xs] += cols6[:, i, j].transpose(1, 0, 2, 3)
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)
