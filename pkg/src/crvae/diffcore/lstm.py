"""Fused LSTM cell.

Gate layout inside the weight columns is fixed as (i, f, g, o): input gate,
forget gate, cell candidate, output gate, each of width H.
"""
from __future__ import annotations

import numpy as np

from .ops import _sigmoid
from .tensor import DimensionError, Tensor, record

GATE_ORDER = ("i", "f", "g", "o")


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One step: ``x`` [B,I], state ``h``, ``c`` [B,H]; ``w_x`` [I,4H], ``w_h`` [H,4H], ``b`` [4H]."""
    bsz, isz = x.shape
    hsz = h.shape[1]
    if h.shape != (bsz, hsz) or c.shape != (bsz, hsz):
        raise DimensionError(f"lstm_cell: h {h.shape} and c {c.shape} must both be [{bsz},{hsz}]")
    if w_x.shape != (isz, 4 * hsz):
        raise DimensionError(f"lstm_cell: w_x is {w_x.shape}, expected ({isz}, {4 * hsz})")
    if w_h.shape != (hsz, 4 * hsz):
        raise DimensionError(f"lstm_cell: w_h is {w_h.shape}, expected ({hsz}, {4 * hsz})")
    if b.shape != (4 * hsz,):
        raise DimensionError(f"lstm_cell: b is {b.shape}, expected ({4 * hsz},)")

    z = x.data @ w_x.data + h.data @ w_h.data + b.data
    i = _sigmoid(z[:, :hsz])
    f = _sigmoid(z[:, hsz:2 * hsz])
    g = np.tanh(z[:, 2 * hsz:3 * hsz])
    o = _sigmoid(z[:, 3 * hsz:])
    c_new = f * c.data + i * g
    tc = np.tanh(c_new)
    h_new = o * tc

    def vjp(grads):
        dh, dc = grads
        dct = dc + dh * o * (1 - tc * tc)
        dz = np.concatenate([
            dct * g * i * (1 - i),
            dct * c.data * f * (1 - f),
            dct * i * (1 - g * g),
            dh * tc * o * (1 - o),
        ], axis=1)
        return (
            dz @ w_x.data.T if x.requires_grad else None,
            dz @ w_h.data.T if h.requires_grad else None,
            dct * f if c.requires_grad else None,
            x.data.T @ dz if w_x.requires_grad else None,
            h.data.T @ dz if w_h.requires_grad else None,
            dz.sum(axis=0) if b.requires_grad else None,
        )

    return record("lstm_cell", (x, h, c, w_x, w_h, b), (h_new, c_new), vjp)
