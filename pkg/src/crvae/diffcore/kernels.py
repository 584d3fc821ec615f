"""Backend selection for the convolution hot kernels.

The compiled core is used when it imports; set ``CRVAE_PURE_PYTHON=1`` to
force the numpy fallback. Both backends produce bitwise identical results.
"""
from __future__ import annotations

import os

from . import _kernels_py

python_im2col = _kernels_py.im2col
python_col2im = _kernels_py.col2im

compiled_im2col = compiled_col2im = None
if not os.environ.get("CRVAE_PURE_PYTHON"):
    try:
        from ._ckernels import col2im as compiled_col2im  # type: ignore[import-not-found]
        from ._ckernels import im2col as compiled_im2col  # type: ignore[import-not-found]
    except ImportError:  # extension not built
        pass

if compiled_im2col is not None:
    BACKEND = "cython"
    im2col, col2im = compiled_im2col, compiled_col2im
else:
    BACKEND = "python"
    im2col, col2im = python_im2col, python_col2im


def use_backend(name: str) -> None:
    """Switch backends at runtime (benchmarks and parity tests)."""
    global BACKEND, im2col, col2im
    if name == "python":
        im2col, col2im = python_im2col, python_col2im
    elif name == "cython":
        if compiled_im2col is None:
            raise RuntimeError("compiled kernels are not available; build the extension first")
        im2col, col2im = compiled_im2col, compiled_col2im
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
