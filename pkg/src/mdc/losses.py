"""Negative-ELBO estimators for masked diffusion.

All estimators work on a batch of clean sequences ``x0`` of shape ``(B, N)``
and return a :class:`LossEstimate` in nats per sequence. Continuous-time
estimators integrate over ``t ~ Uniform(t_min, 1)``; the ``[0, t_min)`` slice
is covered by the reconstruction term in :func:`boundary_terms`.

The ``*_terms`` functions evaluate one Monte Carlo draw per row for given
``(x0, xt, t)`` and optionally the gradient of the mean value with respect to
the predictor parameters. Training uses those directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .forward import ForwardKernel, InconsistentStateError
from .predictor import Predictor
from .schedule import T_MIN, Schedule, VectorSchedule

ESTIMATORS = ("L_T", "L_inf_ce", "L_ctmc", "L_score", "L_maskgit", "L_genmd4")


@dataclass
class LossEstimate:
    value: float
    estimator: str
    draws: int
    per_draw: np.ndarray
    offset_known_constant: float | None = None

    def __post_init__(self):
        if self.estimator not in ESTIMATORS and not self.estimator.startswith("L_ctmc"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not np.all(np.isfinite(self.per_draw)):
            raise FloatingPointError(f"{self.estimator}: non-finite per-draw values")

    @classmethod
    def from_draws(cls, estimator, per_draw, draws=None, offset=None):
        per_draw = np.asarray(per_draw, dtype=np.float64)
        return cls(float(per_draw.mean()), estimator, int(draws if draws is not None else per_draw.size),
                   per_draw, offset)

    @property
    def variance(self) -> float:
        return float(self.per_draw.var(ddof=1)) if self.per_draw.size > 1 else 0.0

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.per_draw.size) if self.per_draw.size > 1 else 0.0


def _as_batch(x0):
    x0 = np.asarray(x0)
    return x0[None] if x0.ndim == 1 else x0


def _take(arr, idx):
    return np.take_along_axis(arr, idx[..., None], axis=-1)[..., 0]


def sample_times(rng: np.random.Generator, n: int, t_min: float = T_MIN, antithetic: bool = False,
                 shuffle: bool = True) -> np.ndarray:
    """Times in ``[t_min, 1)``. Antithetic mode pairs ``u`` with ``1 - u``."""
    if antithetic:
        u = rng.random((n + 1) // 2)
        u = np.concatenate([u, 1.0 - u])[:n]
        if shuffle:
            rng.shuffle(u)
    else:
        u = rng.random(n)
    return t_min + (1.0 - t_min) * u


def _draw_rows(x0, draws, rng, t_min, antithetic):
    """Replicate rows and draw times; antithetic pairs are rows ``i`` and ``i + H``."""
    x0 = _as_batch(x0)
    if antithetic:
        half = (draws + 1) // 2
        rows = np.tile(np.repeat(x0, half, axis=0), (2, 1))
        u = rng.random(rows.shape[0] // 2)
        t = t_min + (1.0 - t_min) * np.concatenate([u, 1.0 - u])
    else:
        rows = np.repeat(x0, draws, axis=0)
        t = sample_times(rng, rows.shape[0], t_min)
    return rows, t


def _finish(name, values, antithetic, offset=None):
    if antithetic:
        h = values.size // 2
        per = 0.5 * (values[:h] + values[h:])
        return LossEstimate.from_draws(name, per, draws=values.size, offset=offset)
    return LossEstimate.from_draws(name, values, offset=offset)


# -----------------------------------------------------------------------------
# discrete time
# -----------------------------------------------------------------------------

def per_step_kl(x0, xt, s, t, predictor: Predictor, kernel: ForwardKernel):
    """KL(q(x_s | x_t, x0) || p(x_s | x_t)) summed over positions.

    Scalar schedules reduce to ``-xi * log mu[x0]`` at masked positions. For a
    vector schedule the staying-masked branch adds a second term.
    """
    x0b, xtb = _as_batch(x0), _as_batch(xt)
    m = kernel.m
    masked = xtb == m
    bad = ~masked & (xtb != x0b)
    if np.any(bad):
        raise InconsistentStateError("x_t must equal x0 or the mask at every position")
    logp = predictor.log_probs(xtb, t)
    lp0 = np.where(masked, _take(logp, np.where(masked, x0b, 0)), 0.0)
    if kernel.vector:
        xi_all = np.asarray(kernel.xi(np.arange(m), s, t))  # (m,)
        xi0 = xi_all[x0b]
        stay0 = 1.0 - xi0
        stay_mu = (np.exp(np.where(masked[..., None], logp, -np.inf)) * (1.0 - xi_all)).sum(-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            extra = np.where(masked & (stay0 > 0), stay0 * np.log(stay0 / stay_mu), 0.0)
        kl = np.where(masked, -xi0 * lp0 + extra, 0.0)
    else:
        xi = float(kernel.xi(0, s, t))
        kl = np.where(masked, -xi * lp0, 0.0)
    out = kl.sum(axis=1)
    return float(out[0]) if np.ndim(x0) == 1 else out


def loss_discrete(x0, T: int, predictor: Predictor, kernel: ForwardKernel, rng, draws: int = 1,
                  full: bool = False) -> LossEstimate:
    """Unbiased estimate of ``L_T = sum_{i=2}^T E[KL_i]``; ``full`` adds the boundary terms."""
    if T < 2:
        raise ValueError("T must be at least 2")
    rows = np.repeat(_as_batch(x0), draws, axis=0)
    i = rng.integers(2, T + 1, size=rows.shape[0])
    values = np.empty(rows.shape[0])
    for step in np.unique(i):
        sel = i == step
        t, s = step / T, (step - 1) / T
        xt = kernel.sample_forward(rows[sel], t, rng)
        values[sel] = (T - 1) * per_step_kl(rows[sel], xt, s, t, predictor, kernel)
    if full:
        rec, prior = boundary_terms(rows, kernel, t_min=1.0 / T)
        values = values + rec + prior
    return LossEstimate.from_draws("L_T", values)


# -----------------------------------------------------------------------------
# continuous-time cross-entropy
# -----------------------------------------------------------------------------

def ce_terms(x0, xt, t, predictor: Predictor, schedule: Schedule, grad: bool = False):
    """Per-row ``ce_weight(t) * sum_{masked} log mu[x0]`` (positive)."""
    m = predictor.m
    masked = xt == m
    logp = predictor.log_probs(xt, t)
    lp0 = np.where(masked, _take(logp, np.where(masked, x0, 0)), 0.0)
    w = np.asarray(schedule.ce_weight(t))
    values = w * lp0.sum(axis=1)
    if not grad:
        return values, None
    up = np.zeros(logp.shape)
    b, n = np.nonzero(masked)
    up[b, n, x0[b, n]] = w[b] / xt.shape[0]
    return values, predictor.backward(up)


def loss_continuous_ce(x0, predictor: Predictor, kernel: ForwardKernel, rng, draws: int = 1,
                       antithetic: bool = False, t_min: float = T_MIN) -> LossEstimate:
    rows, t = _draw_rows(x0, draws, rng, t_min, antithetic)
    xt = kernel.sample_forward(rows, t, rng)
    values, _ = ce_terms(rows, xt, t, predictor, kernel.schedule)
    return _finish("L_inf_ce", (1.0 - t_min) * values, antithetic)


# -----------------------------------------------------------------------------
# CTMC rate form
# -----------------------------------------------------------------------------

def ctmc_terms(x0, xt, t, predictor: Predictor, schedule: Schedule, rng=None,
               doubly_stochastic: bool = False, grad: bool = False):
    """One draw of the rate-form integrand.

    ``-(R_kk + sum_{j != k} Q_kj log R_jk)`` with the sum running over the
    sequences ``j`` obtained by masking one unmasked position of ``k``. The
    doubly stochastic variant replaces that sum by ``Z_k`` times a single
    uniformly chosen term.

    Returns ``(values, known, grad)`` where ``known`` is the parameter-free part
    of each value.
    """
    m = predictor.m
    B, N = xt.shape
    masked = xt == m
    kept = ~masked
    n_masked = masked.sum(axis=1)
    n_kept = kept.sum(axis=1)
    gamma = np.asarray(schedule.ce_weight(t))
    beta = np.asarray(schedule.beta(t))
    log_rate_scale = np.log(-gamma)

    if doubly_stochastic:
        has = n_kept > 0
        choice = np.full(B, -1)
        if rng is None:
            raise ValueError("doubly stochastic estimate needs an rng")
        r = rng.random(B)
        for b in np.nonzero(has)[0]:
            pos = np.nonzero(kept[b])[0]
            choice[b] = pos[min(int(r[b] * pos.size), pos.size - 1)]
        rows_b = np.nonzero(has)[0]
        rows_n = choice[has]
        mult = (beta * n_kept)[rows_b]
    else:
        rows_b, rows_n = np.nonzero(kept)
        mult = beta[rows_b]

    variants = xt[rows_b].copy()
    variants[np.arange(rows_b.size), rows_n] = m
    sum_log = np.zeros(B)
    if rows_b.size:
        logp = predictor.log_probs(variants, t[rows_b])
        lp = logp[np.arange(rows_b.size), rows_n, x0[rows_b, rows_n]]
        np.add.at(sum_log, rows_b, mult * lp)
    known = -(gamma * n_masked + beta * n_kept * log_rate_scale)
    values = known - sum_log
    g = None
    if grad:
        g = np.zeros(predictor.params.size)
        if rows_b.size:
            up = np.zeros(logp.shape)
            up[np.arange(rows_b.size), rows_n, x0[rows_b, rows_n]] = -mult / B
            g = predictor.backward(up)
    return values, known, g


def loss_ctmc(x0, predictor: Predictor, kernel: ForwardKernel, rng, draws: int = 1,
              t_min: float = T_MIN, doubly_stochastic: bool = False) -> LossEstimate:
    """Rate-form objective. Equals ``L_inf_ce`` up to a parameter-free constant.

    ``offset_known_constant`` holds the estimate of the parameter-free part, so
    ``value - offset_known_constant`` estimates the same quantity as
    :func:`loss_continuous_ce`.
    """
    if kernel.vector:
        raise ValueError("the rate form is implemented for scalar schedules")
    rows, t = _draw_rows(x0, draws, rng, t_min, False)
    xt = kernel.sample_forward(rows, t, rng)
    values, known, _ = ctmc_terms(rows, xt, t, predictor, kernel.schedule, rng=rng,
                                  doubly_stochastic=doubly_stochastic)
    scale = 1.0 - t_min
    name = "L_ctmc_ds" if doubly_stochastic else "L_ctmc"
    return LossEstimate.from_draws(name, scale * values, offset=float(scale * known.mean()))


# -----------------------------------------------------------------------------
# score parameterization
# -----------------------------------------------------------------------------

def psi(y):
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)) - y, 0.0)
    return float(out) if out.ndim == 0 else out


class ScoreView:
    """Score model for masked positions built from a mean predictor.

    With ``constrained=True`` (the default) ``s(m, t)_j = r_t * mu_j`` with
    ``r_t = alpha_t / (1 - alpha_t)``, so the scores of a masked position sum
    to ``r_t``. ``constrained=False`` uses ``r_t * exp(logits)`` without
    normalization and exists to demonstrate what breaks without the constraint.
    """

    def __init__(self, predictor: Predictor, schedule: Schedule, constrained: bool = True):
        self.predictor = predictor
        self.schedule = schedule
        self.constrained = constrained
        self.m = predictor.m

    def ratio(self, t):
        return np.exp(np.asarray(self.schedule.log_snr(t)))

    def score(self, xt, t):
        """Scores ``(B, N, m)``; rows of unmasked positions are zero."""
        xt = _as_batch(xt)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (xt.shape[0],))
        r = self.ratio(t)[:, None, None]
        masked = (xt == self.m)[..., None]
        if self.constrained:
            mu = self.predictor.predict(xt, t)
            return np.where(masked, r * mu, 0.0)
        z = self.predictor.raw_logits(xt, t)
        return np.where(masked, r * np.exp(z), 0.0)


def score_terms(x0, xt, t, score: ScoreView, grad: bool = False):
    """``beta * sum_{masked} (sum_j s_j - r log s_{x0} + psi(r))`` per row."""
    m = score.m
    masked = xt == m
    s = score.score(xt, t)
    r = score.ratio(t)
    beta = np.asarray(score.schedule.beta(t))
    s0 = np.where(masked, _take(s, np.where(masked, x0, 0)), 1.0)
    inner = s.sum(axis=-1) - r[:, None] * np.log(s0) + psi(r)[:, None]
    values = beta * np.where(masked, inner, 0.0).sum(axis=1)
    if not grad:
        return values, None
    if not score.constrained:
        raise NotImplementedError("gradients are only defined for the constrained score")
    # d/dlog mu_v of the bracket is s_v - r * [v == x0]
    up = np.where(masked[..., None], s, 0.0)
    b, n = np.nonzero(masked)
    up[b, n, x0[b, n]] -= r[b]
    up *= beta[:, None, None] / xt.shape[0]
    return values, score.predictor.backward(up)


def loss_score_entropy(x0, score: ScoreView, kernel: ForwardKernel, rng, draws: int = 1,
                       t_min: float = T_MIN) -> LossEstimate:
    rows, t = _draw_rows(x0, draws, rng, t_min, False)
    xt = kernel.sample_forward(rows, t, rng)
    values, _ = score_terms(rows, xt, t, score)
    return LossEstimate.from_draws("L_score", (1.0 - t_min) * values)


def sum_rule_residual(score: ScoreView, xt, t) -> float:
    """Max over masked positions of ``|sum_j s_j - alpha/(1 - alpha)|``."""
    xt = _as_batch(xt)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (xt.shape[0],))
    s = score.score(xt, t).sum(axis=-1)
    r = score.ratio(t)[:, None]
    masked = xt == score.m
    if not masked.any():
        return 0.0
    return float(np.max(np.abs(s - r)[masked]))


# -----------------------------------------------------------------------------
# MaskGIT
# -----------------------------------------------------------------------------

def loss_maskgit(x0, predictor: Predictor, kernel: ForwardKernel, rng, draws: int = 1,
                 t_min: float = T_MIN) -> LossEstimate:
    """Unweighted masked cross-entropy with masking rate ``1 - alpha_t``. Not a likelihood bound."""
    rows, t = _draw_rows(x0, draws, rng, t_min, False)
    xt = kernel.sample_forward(rows, t, rng)
    masked = xt == predictor.m
    logp = predictor.log_probs(xt, t)
    lp0 = np.where(masked, _take(logp, np.where(masked, rows, 0)), 0.0)
    return LossEstimate.from_draws("L_maskgit", -(1.0 - t_min) * lp0.sum(axis=1))


# -----------------------------------------------------------------------------
# state-dependent schedule
# -----------------------------------------------------------------------------

def genmd4_terms(x0, xt, t, predictor: Predictor, v: VectorSchedule, grad: bool = False):
    """``sum_{masked} ce_w^T (x0 - mu + x0 x0^T log mu)`` per row, with ``ce_w = -w / t``."""
    m = predictor.m
    masked = xt == m
    logp = predictor.log_probs(xt, t)
    mu = np.where(masked[..., None], np.exp(logp), 0.0)
    cw = v.ce_weight(t)  # (B, m)
    idx = np.where(masked, x0, 0)
    lp0 = np.where(masked, _take(logp, idx), 0.0)
    cw0 = np.take_along_axis(cw, idx, axis=1)
    per_pos = np.where(masked, cw0 * (1.0 + lp0) - (mu * cw[:, None, :]).sum(-1), 0.0)
    values = per_pos.sum(axis=1)
    if not grad:
        return values, None
    up = -mu * cw[:, None, :]
    b, n = np.nonzero(masked)
    up[b, n, x0[b, n]] += cw0[b, n]
    up = np.where(masked[..., None], up, 0.0) / xt.shape[0]
    return values, predictor.backward(up)


def loss_genmd4(x0, predictor: Predictor, v: VectorSchedule, rng, draws: int = 1,
                t_min: float = T_MIN, antithetic: bool = False) -> LossEstimate:
    kernel = ForwardKernel(v)
    rows, t = _draw_rows(x0, draws, rng, t_min, antithetic)
    xt = kernel.sample_forward(rows, t, rng)
    values, _ = genmd4_terms(rows, xt, t, predictor, v)
    return _finish("L_genmd4", (1.0 - t_min) * values, antithetic)


# -----------------------------------------------------------------------------
# boundary terms
# -----------------------------------------------------------------------------

def boundary_terms(x0, kernel: ForwardKernel, t_min: float = T_MIN):
    """Reconstruction and prior-KL terms, summed over positions.

    Per token: reconstruction ``(1 - alpha_{t_min}) log m`` and prior KL
    ``alpha_1 log m`` against the prior that spreads ``alpha_1`` uniformly over
    the clean values.
    """
    x0b = _as_batch(x0)
    log_m = math.log(kernel.m)
    rec = ((1.0 - kernel.keep_prob(x0b, t_min)) * log_m).sum(axis=1)
    prior = (kernel.keep_prob(x0b, 1.0) * log_m).sum(axis=1)
    if np.ndim(x0) == 1:
        return float(rec[0]), float(prior[0])
    return rec, prior
