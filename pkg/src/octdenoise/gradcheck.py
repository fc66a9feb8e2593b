"""Central finite-difference gradient checking for tape-recorded functions."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| scaled by the larger of the two gradients' max magnitudes."""
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, step: float = 1e-3,
                   indices: Optional[Sequence[tuple]] = None) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to ``t.data``.

    With ``indices`` only those coordinates are perturbed; the rest of the
    returned array is left at zero.
    """
    grad = np.zeros_like(t.data, dtype=np.float64)
    it = indices if indices is not None else list(np.ndindex(t.shape))
    for idx in it:
        orig = t.data[idx]
        t.data[idx] = orig + step
        plus = fn().item()
        t.data[idx] = orig - step
        minus = fn().item()
        t.data[idx] = orig
        grad[idx] = (plus - minus) / (2 * step)
    return grad


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = 1e-3,
                    max_coords: Optional[int] = None, seed: int = 0) -> dict:
    """Compare tape gradients of ``fn`` against central differences.

    Returns ``{name_or_index: relative_error}``. ``max_coords`` bounds how
    many randomly chosen coordinates of each tensor are perturbed.
    """
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)

    rng = np.random.default_rng(seed)
    errors = {}
    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        indices = None
        if max_coords is not None and t.size > max_coords:
            flat = rng.choice(t.size, size=max_coords, replace=False)
            indices = [np.unravel_index(k, t.shape) for k in flat]
        numeric = numerical_grad(fn, t, step, indices)
        if indices is not None:
            sel = tuple(np.array(indices).T)
            errors[t.name or i] = relative_error(analytic[sel], numeric[sel])
        else:
            errors[t.name or i] = relative_error(analytic, numeric)
    return errors
