"""Central finite-difference gradient checker."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    input_index: int
    element: tuple
    analytic: float
    numeric: float
    checked: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
               max_per_input: Optional[int] = None, seed: int = 0, floor: float = 1e-6) -> GradCheckResult:
    """Compare reverse-mode gradients of scalar ``fn(*inputs)`` against central differences.

    Relative error per element is ``|a - n| / max(|a|, |n|, floor)``. Inputs with
    ``requires_grad`` set are checked; ``max_per_input`` samples that many
    elements (seeded) from each large input instead of all of them.
    Mismatches are reported, never raised.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("grad_check needs 64-bit inputs; build them under precision('float64')")
    if not 1e-6 <= h <= 1e-4:
        raise ValueError(f"step h={h} outside [1e-6, 1e-4]")

    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = fn(*inputs)
        tape.backward(loss)
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = GradCheckResult(0.0, -1, (), 0.0, 0.0, 0)
    checked = 0
    for k, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        a = analytic[k] if analytic[k] is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_input is not None and flat.size > max_per_input:
            idx = np.sort(rng.choice(flat.size, size=max_per_input, replace=False))
        for e in idx:
            orig = flat[e]
            flat[e] = orig + h
            fp = float(fn(*inputs).data)
            flat[e] = orig - h
            fm = float(fn(*inputs).data)
            flat[e] = orig
            num = (fp - fm) / (2 * h)
            ana = float(a.reshape(-1)[e])
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            checked += 1
            if rel > worst.max_rel_error or worst.input_index < 0:
                worst = GradCheckResult(rel, k, np.unravel_index(e, t.shape), ana, num, 0)
    worst.checked = checked
    for t in inputs:
        t.grad = None
    return worst
