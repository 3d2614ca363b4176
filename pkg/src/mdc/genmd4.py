"""Gradient of the state-dependent loss with respect to the exponents ``w``.

The loss is ``-int (1/t) E_q[f(x_t, x0)] dt`` with ``f = w . g``. Because the
masking distribution itself depends on ``w``, differentiating through sampled
``x_t`` misses the score-function term. The two-sample leave-one-out
estimator below keeps it, using each sample's ``f`` as the other's baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import ForwardKernel, InconsistentStateError
from .predictor import Predictor
from .schedule import T_MIN, ScheduleDomainError, VectorSchedule


@dataclass
class WGradient:
    grad_w: np.ndarray
    pathwise_term: np.ndarray
    rloo_term: np.ndarray
    sample_count: int = 2
    per_draw: np.ndarray | None = None  # (draws, m) single-t estimates

    def __post_init__(self):
        if self.sample_count % 2:
            raise ValueError("sample_count must be even")
        if not np.all(np.isfinite(self.grad_w)):
            raise FloatingPointError("non-finite w-gradient")

    @property
    def components(self):
        return self.pathwise_term, self.rloo_term

    def log_space(self, w) -> np.ndarray:
        """Chain rule for ``log w`` parameterization: ``d/dlog w = w * d/dw``."""
        return np.asarray(w) * self.grad_w


def _check_consistent(x0, xt, m):
    bad = (xt != m) & (xt != x0)
    if np.any(bad):
        raise InconsistentStateError("x_t has unmasked entries that differ from x0")


def g_vector(x0, xt, predictor: Predictor, t, logp=None) -> np.ndarray:
    """``sum_{masked n} (e_{x0} - mu + e_{x0} log mu_{x0})``; shape ``(B, m)`` or ``(m,)``."""
    x0 = np.asarray(x0)
    xt = np.asarray(xt)
    squeeze = x0.ndim == 1
    x0b, xtb = np.atleast_2d(x0), np.atleast_2d(xt)
    m = predictor.m
    _check_consistent(x0b, xtb, m)
    if logp is None:
        logp = predictor.log_probs(xtb, t)
    masked = xtb == m
    mu = np.where(masked[..., None], np.exp(logp), 0.0)
    g = -mu.sum(axis=1)
    b, n = np.nonzero(masked)
    vals = x0b[b, n]
    np.add.at(g, (b, vals), 1.0 + logp[b, n, vals])
    return g[0] if squeeze else g


def f_scalar(w, g) -> np.ndarray:
    return np.asarray(g) @ np.asarray(w)


def grad_log_q(x0, xt, v: VectorSchedule, t) -> np.ndarray:
    """d/dw of ``log q(x_t | x0)``; ``t`` is a scalar or one time per row."""
    x0 = np.asarray(x0)
    xt = np.asarray(xt)
    squeeze = x0.ndim == 1
    x0b, xtb = np.atleast_2d(x0), np.atleast_2d(xt)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x0b.shape[0],))
    if np.any(t <= 0.0) or np.any(t >= 1.0):
        raise ScheduleDomainError("grad_log_q needs t in the open interval (0, 1)")
    m = v.m
    _check_consistent(x0b, xtb, m)
    lt = np.log(t)[:, None]
    tw = t[:, None] ** v.w[x0b]
    contrib = np.where(xtb == m, lt, -tw * lt / (1.0 - tw))
    out = np.zeros((x0b.shape[0], m))
    rows = np.repeat(np.arange(x0b.shape[0]), x0b.shape[1])
    np.add.at(out, (rows, x0b.reshape(-1)), contrib.reshape(-1))
    return out[0] if squeeze else out


def _draw(x0, predictor, v, rng, t, t_min):
    x0b = np.atleast_2d(np.asarray(x0))
    B = x0b.shape[0]
    if t is None:
        tt = t_min + (1.0 - t_min) * rng.random(B)
        scale = 1.0 - t_min
    else:
        tt = np.full(B, float(t))
        scale = 1.0
    kernel = ForwardKernel(v)
    both = np.concatenate([x0b, x0b])
    t2 = np.concatenate([tt, tt])
    xt = kernel.sample_forward(both, t2, rng)
    logp = predictor.log_probs(xt, t2)
    g = g_vector(both, xt, predictor, t2, logp=logp)
    dlq = grad_log_q(both, xt, v, t2)
    return B, tt, scale, g[:B], g[B:], dlq[:B], dlq[B:]


def rloo_w_gradient(x0, predictor: Predictor, v: VectorSchedule, rng, t: float | None = None,
                    t_min: float = T_MIN) -> WGradient:
    """Two-sample leave-one-out estimate of d/dw of the loss, one estimate per row of ``x0``.

    Both samples of a row share one time. With ``t`` given the estimate targets
    the integrand at that time; otherwise ``t ~ U(t_min, 1)`` and the estimate
    targets the integral over ``[t_min, 1]``.
    """
    B, tt, scale, g1, g2, q1, q2 = _draw(x0, predictor, v, rng, t, t_min)
    path, rloo = rloo_combine(v.w, tt, g1, g2, q1, q2, scale)
    return WGradient(path.mean(0) + rloo.mean(0), path.mean(0), rloo.mean(0), 2, path + rloo)


def rloo_combine(w, t, g1, g2, q1, q2, scale=1.0):
    """Per-row ``(pathwise, rloo)`` parts from the two samples' ``g`` and ``d log q``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    g1, g2, q1, q2 = (np.atleast_2d(a) for a in (g1, g2, q1, q2))
    f1, f2 = f_scalar(w, g1), f_scalar(w, g2)
    c = -scale / (2.0 * t)[:, None]
    return c * (g1 + g2), c * (q1 - q2) * (f1 - f2)[:, None]


def pathwise_w_gradient(x0, predictor: Predictor, v: VectorSchedule, rng, t: float | None = None,
                        t_min: float = T_MIN) -> WGradient:
    """The biased estimate that drops the score-function term. Kept for comparison only."""
    B, tt, scale, g1, g2, _, _ = _draw(x0, predictor, v, rng, t, t_min)
    path = -scale / (2.0 * tt)[:, None] * (g1 + g2)
    return WGradient(path.mean(0), path.mean(0), np.zeros(v.m), 2, path)
