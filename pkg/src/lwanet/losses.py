"""Focal loss over per-pixel class logits, with analytic gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, record

P_FLOOR = 1e-12


@dataclass
class FocalConfig:
    gamma: float = 6.0
    ignore_index: int | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


def focal_loss(logits: Tensor, target, cfg: FocalConfig = FocalConfig()) -> Tensor:
    """Mean over valid pixels of -(1 - p_t)^gamma * log(p_t).

    ``target`` is an integer mask [n, h, w]; ``cfg.ignore_index`` pixels are
    excluded from the mean. Stabilized through log-sum-exp and a p_t floor.
    """
    target = np.asarray(target)
    n, c, h, w = logits.shape
    if target.shape != (n, h, w):
        raise ShapeError(
            f"focal_loss: target shape {target.shape} != {(n, h, w)} for logits "
            f"{tuple(logits.shape)}"
        )
    valid = np.ones(target.shape, dtype=bool)
    if cfg.ignore_index is not None:
        valid = target != cfg.ignore_index
    checked = target[valid]
    if checked.size and (checked.min() < 0 or checked.max() >= c):
        bad = checked[(checked < 0) | (checked >= c)][0]
        raise ValueError(f"focal_loss: class id {bad} out of range [0, {c})")
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("focal_loss: no valid pixels")

    x = logits.data
    z = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse                               # [n,c,h,w]
    p = np.exp(logp)
    t = np.where(valid, target, 0)
    ni, hi, wi = np.ix_(np.arange(n), np.arange(h), np.arange(w))
    logp_t = logp[ni, t, hi, wi]
    p_t = np.maximum(p[ni, t, hi, wi], P_FLOOR)
    focal_w = (1.0 - p_t) ** cfg.gamma
    per_pixel = -focal_w * np.maximum(logp_t, np.log(P_FLOOR))
    loss_val = float(per_pixel[valid].sum() / n_valid)
    out = Tensor(np.asarray(loss_val, dtype=x.dtype))

    gamma = cfg.gamma

    def bwd(g):
        # dL/dp_t with the stabilized (clipped) p_t
        if gamma == 0.0:
            dldpt = -1.0 / p_t
        else:
            dldpt = gamma * (1.0 - p_t) ** (gamma - 1.0) * np.log(p_t) - focal_w / p_t
        dldpt = np.where(valid, dldpt, 0.0) / n_valid
        # softmax jacobian: dp_t/dx_c = p_t * (delta_tc - p_c)
        onehot = np.zeros_like(p)
        onehot[ni, t, hi, wi] = 1.0
        coeff = (dldpt * p_t)[:, None, :, :]
        return (g * coeff * (onehot - p),)

    record(out, (logits,), bwd)
    return out


def cross_entropy_per_pixel(logits, target):
    """Reference per-pixel cross-entropy (oracle for the gamma=0 case)."""
    x = np.asarray(logits, dtype=np.float64)
    z = x - x.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n, c, h, w = x.shape
    ni, hi, wi = np.ix_(np.arange(n), np.arange(h), np.arange(w))
    return -logp[ni, np.asarray(target), hi, wi]


def focal_per_pixel(logits, target, gamma):
    """Per-pixel focal values (no reduction), for tests and diagnostics."""
    x = np.asarray(logits, dtype=np.float64)
    z = x - x.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n, c, h, w = x.shape
    ni, hi, wi = np.ix_(np.arange(n), np.arange(h), np.arange(w))
    p_t = np.maximum(np.exp(logp[ni, np.asarray(target), hi, wi]), P_FLOOR)
    return -((1.0 - p_t) ** gamma) * np.log(p_t)
