"""AdamW with decoupled weight decay, parameter EMA, and the learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .predictor import NumericError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adamw_step(params, grads, state: AdamState, lr: float, weight_decay: float = 0.0,
               betas=(0.9, 0.999), eps: float = 1e-8):
    """One AdamW update. Returns ``(new_params, new_state)``; inputs are not modified."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads and optimizer state must have the same shape")
    if not (np.all(np.isfinite(params)) and np.all(np.isfinite(grads))):
        raise NumericError("non-finite parameters or gradients")
    b1, b2 = betas
    step = state.step + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads**2
    m_hat = m / (1.0 - b1**step)
    v_hat = v / (1.0 - b2**step)
    new = params - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * params)
    return new, AdamState(m, v, step)


def ema_update(ema_params, params, decay: float) -> np.ndarray:
    ema_params = np.asarray(ema_params, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if ema_params.shape != params.shape:
        raise ValueError("EMA and parameter shapes differ")
    if not (np.all(np.isfinite(ema_params)) and np.all(np.isfinite(params))):
        raise NumericError("non-finite parameters in EMA update")
    if decay == 0.0:
        return params.copy()
    return decay * ema_params + (1.0 - decay) * params


def learning_rate(step: int, base: float, warmup: int, total: int, cosine: bool) -> float:
    """Linear warmup, then constant or cosine decay to zero. ``step`` counts from 0."""
    if warmup > 0 and step < warmup:
        return base * (step + 1) / warmup
    if not cosine:
        return base
    span = max(total - warmup, 1)
    frac = min(max(step - warmup, 0) / span, 1.0)
    return base * 0.5 * (1.0 + math.cos(math.pi * frac))
