"""Gradient collection and a finite-difference gradient-check harness."""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


class GradStore(dict):
    """Map parameter name -> gradient array (same shape as the parameter)."""


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> GradStore:
    """Run reverse-mode from a scalar loss and collect gradients for the
    named parameters. Parameters never touched in the forward pass get
    zero gradients."""
    if loss.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    loss.backward()
    store = GradStore()
    for name, p in params.items():
        g = p.grad
        store[name] = np.zeros_like(p.data) if g is None else g
    return store


def zero_grads(params) -> None:
    values = params.values() if isinstance(params, Mapping) else params
    for p in values:
        p.grad = None


def sample_smooth_inputs(rng, shape, scale=1.0, margin=1e-3, dtype=np.float64) -> Tensor:
    """Random 64-bit input with no coordinate within ``margin`` of zero,
    keeping finite differences away from ReLU-style kinks."""
    x = rng.standard_normal(shape) * scale
    for _ in range(100):
        close = np.abs(x) < margin
        if not close.any():
            break
        x[close] = rng.standard_normal(close.sum()) * scale
    return Tensor(x.astype(dtype), requires_grad=True)


def grad_check(op_closure: Callable[..., Tensor], inputs: Sequence[Tensor],
               h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``op_closure(*inputs)`` must return a scalar Tensor; inputs should be
    64-bit. Error metric per coordinate:
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    zero_grads(inputs)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
    out = op_closure(*inputs)
    if out.shape != ():
        raise ShapeError("grad_check closure must return a scalar")
    out.backward()
    analytic = [np.array(t.grad, dtype=np.float64) for t in inputs]

    max_err = 0.0
    for t, an in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        num = np.empty_like(an).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = op_closure(*inputs).item()
            flat[i] = orig - h
            f_minus = op_closure(*inputs).item()
            flat[i] = orig
            num[i] = (f_plus - f_minus) / (2.0 * h)
        num = num.reshape(an.shape)
        denom = np.maximum(1.0, np.maximum(np.abs(an), np.abs(num)))
        err = np.abs(an - num) / denom
        max_err = max(max_err, float(err.max()))
    return max_err
