"""Exact values for tiny instances: enumerate every mask pattern, integrate time by quadrature.

These are the reference values the Monte Carlo estimators are checked
against. They are written as plain loops over patterns and positions and only
share the predictor with the estimators.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate as _integrate
from scipy.special import xlogy

from .forward import ForwardKernel
from .losses import ScoreView, psi
from .predictor import Predictor
from .schedule import T_MIN, Schedule, VectorSchedule


def gauss_legendre(n: int, a: float, b: float):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def integrate(f, a: float, b: float, edge: float = 1e-3) -> float:
    """Adaptive quadrature of a scalar function with log-substituted end segments.

    Integrands here can vary on scales of ``t_min`` near 0 and ``eps`` near 1.
    """
    opts = dict(limit=500, epsabs=1e-14, epsrel=1e-12)
    total = 0.0
    lo, hi = a + edge, b - edge
    if lo >= hi:
        return _integrate.quad(f, a, b, **opts)[0]
    # [a, lo] with t = a + e^v
    total += _integrate.quad(lambda v: f(a + math.exp(v)) * math.exp(v), -40.0 if a == 0 else math.log(1e-18), math.log(edge), **opts)[0]
    total += _integrate.quad(f, lo, hi, **opts)[0]
    # [hi, b] with t = b - e^v
    total += _integrate.quad(lambda v: f(b - math.exp(v)) * math.exp(v), -40.0, math.log(edge), **opts)[0]
    return total


def mask_patterns(N: int) -> np.ndarray:
    """All ``2**N`` patterns; row ``k`` masks position ``n`` iff bit ``n`` of ``k`` is set."""
    return np.array([[(k >> n) & 1 for n in range(N)] for k in range(2**N)], dtype=bool)


def _pattern_probs(x0, kernel: ForwardKernel, t: float, pats) -> np.ndarray:
    probs = np.ones(len(pats))
    for p, pat in enumerate(pats):
        for n, x in enumerate(x0):
            keep = kernel.marginal(int(x), t)[x]
            probs[p] *= (1.0 - keep) if pat[n] else keep
    return probs


def _states(x0, pats, m):
    return np.where(pats, m, np.asarray(x0)[None, :])


class _Table:
    """Predictor outputs for every pattern at every node, evaluated in one batch."""

    def __init__(self, x0, predictor: Predictor, kernel: ForwardKernel, ts):
        self.x0 = np.asarray(x0)
        self.N = self.x0.size
        self.m = predictor.m
        self.pats = mask_patterns(self.N)
        self.ts = np.asarray(ts, dtype=np.float64)
        self.P = len(self.pats)
        xs = _states(self.x0, self.pats, self.m)
        batch = np.tile(xs, (self.ts.size, 1))
        tb = np.repeat(self.ts, self.P)
        self.batch, self.tb = batch, tb
        self.predictor = predictor
        self.logp = predictor.log_probs(batch, tb).reshape(self.ts.size, self.P, self.N, self.m)
        self.probs = np.stack([_pattern_probs(self.x0, kernel, float(t), self.pats) for t in self.ts])

    def lp(self, q, p, n):
        return self.logp[q, p, n, self.x0[n]]

    def backward(self, up):
        return self.predictor.backward(up.reshape(-1, self.N, self.m))


# -----------------------------------------------------------------------------
# continuous-time forms, one clean sequence
# -----------------------------------------------------------------------------

def exact_ce(x0, predictor: Predictor, kernel: ForwardKernel, a: float = T_MIN, b: float = 1.0,
             nodes: int = 64, grad: bool = False):
    ts, ws = gauss_legendre(nodes, a, b)
    tab = _Table(x0, predictor, kernel, ts)
    cw = kernel.schedule.ce_weight(ts)
    total = 0.0
    up = np.zeros(tab.logp.shape)
    for q in range(ts.size):
        for p, pat in enumerate(tab.pats):
            for n in range(tab.N):
                if pat[n]:
                    c = ws[q] * cw[q] * tab.probs[q, p]
                    total += c * tab.lp(q, p, n)
                    up[q, p, n, tab.x0[n]] += c
    return (total, tab.backward(up)) if grad else total


def ce_integrand(x0, predictor: Predictor, kernel: ForwardKernel, t: float) -> float:
    tab = _Table(x0, predictor, kernel, [t])
    cw = float(kernel.schedule.ce_weight(t))
    return cw * sum(tab.probs[0, p] * tab.lp(0, p, n)
                    for p, pat in enumerate(tab.pats) for n in range(tab.N) if pat[n])


def maskgit_integrand(x0, predictor: Predictor, kernel: ForwardKernel, t: float) -> float:
    tab = _Table(x0, predictor, kernel, [t])
    return -sum(tab.probs[0, p] * tab.lp(0, p, n)
                for p, pat in enumerate(tab.pats) for n in range(tab.N) if pat[n])


def exact_maskgit(x0, predictor, kernel, a=T_MIN, b=1.0, nodes=64) -> float:
    ts, ws = gauss_legendre(nodes, a, b)
    return float(sum(w * maskgit_integrand(x0, predictor, kernel, t) for t, w in zip(ts, ws)))


def exact_ctmc(x0, predictor: Predictor, kernel: ForwardKernel, a: float = T_MIN, b: float = 1.0,
               nodes: int = 64, grad: bool = False):
    """Rate-form integral. Returns ``(value, known_part)`` or ``(value, known_part, grad)``."""
    ts, ws = gauss_legendre(nodes, a, b)
    tab = _Table(x0, predictor, kernel, ts)
    gam = kernel.schedule.ce_weight(ts)
    beta = kernel.schedule.beta(ts)
    value = known = 0.0
    up = np.zeros(tab.logp.shape)
    for q in range(ts.size):
        for p, pat in enumerate(tab.pats):
            c = ws[q] * tab.probs[q, p]
            n_masked = int(pat.sum())
            k_part = -(gam[q] * n_masked + (tab.N - n_masked) * xlogy(beta[q], -gam[q]))
            known += c * k_part
            value += c * k_part
            for n in range(tab.N):
                if not pat[n]:
                    variant = p | (1 << n)
                    value -= c * beta[q] * tab.lp(q, variant, n)
                    up[q, variant, n, tab.x0[n]] -= c * beta[q]
    if grad:
        return value, known, tab.backward(up)
    return value, known


def exact_score(x0, score: ScoreView, kernel: ForwardKernel, a: float = T_MIN, b: float = 1.0,
                nodes: int = 64, grad: bool = False):
    ts, ws = gauss_legendre(nodes, a, b)
    x0 = np.asarray(x0)
    N, m = x0.size, score.m
    pats = mask_patterns(N)
    xs = _states(x0, pats, m)
    batch = np.tile(xs, (ts.size, 1))
    tb = np.repeat(ts, len(pats))
    s = score.score(batch, tb).reshape(ts.size, len(pats), N, m)
    r = score.ratio(ts)
    beta = score.schedule.beta(ts)
    total = 0.0
    up = np.zeros(s.shape)
    for q in range(ts.size):
        probs = _pattern_probs(x0, kernel, float(ts[q]), pats)
        for p, pat in enumerate(pats):
            for n in range(N):
                if pat[n]:
                    c = ws[q] * probs[p] * beta[q]
                    sv = s[q, p, n]
                    total += c * (sv.sum() - r[q] * math.log(sv[x0[n]]) + psi(r[q]))
                    up[q, p, n] += c * sv
                    up[q, p, n, x0[n]] -= c * r[q]
    if grad:
        return total, score.predictor.backward(up.reshape(-1, N, m))
    return total


def exact_genmd4(x0, predictor: Predictor, v: VectorSchedule, a: float = T_MIN, b: float = 1.0,
                 nodes: int = 64, grad: bool = False):
    kernel = ForwardKernel(v)
    ts, ws = gauss_legendre(nodes, a, b)
    tab = _Table(x0, predictor, kernel, ts)
    total = 0.0
    up = np.zeros(tab.logp.shape)
    for q in range(ts.size):
        cw = v.ce_weight(ts[q])
        for p, pat in enumerate(tab.pats):
            for n in range(tab.N):
                if pat[n]:
                    c = ws[q] * tab.probs[q, p]
                    mu = np.exp(tab.logp[q, p, n])
                    x = tab.x0[n]
                    bracket = -mu.copy()
                    bracket[x] += 1.0 + tab.lp(q, p, n)
                    total += c * float(cw @ bracket)
                    up[q, p, n] -= c * cw * mu
                    up[q, p, n, x] += c * cw[x]
    return (total, tab.backward(up)) if grad else total


def genmd4_integrand(x0, predictor: Predictor, w, t: float) -> float:
    """Integrand of the state-dependent loss at time ``t`` as a function of the exponents ``w``."""
    v = VectorSchedule(np.asarray(w, dtype=np.float64))
    tab = _Table(x0, predictor, ForwardKernel(v), [t])
    cw = v.ce_weight(t)
    total = 0.0
    for p, pat in enumerate(tab.pats):
        for n in range(tab.N):
            if pat[n]:
                mu = np.exp(tab.logp[0, p, n])
                bracket = -mu
                bracket[tab.x0[n]] += 1.0 + tab.lp(0, p, n)
                total += tab.probs[0, p] * float(cw @ bracket)
    return total


def genmd4_w_gradient(x0, predictor: Predictor, w, t: float) -> np.ndarray:
    """Exact d/dw of :func:`genmd4_integrand` (score-function and pathwise parts)."""
    w = np.asarray(w, dtype=np.float64)
    x0 = np.asarray(x0)
    m = predictor.m
    pats = mask_patterns(x0.size)
    logp = predictor.log_probs(_states(x0, pats, m), np.full(len(pats), t))
    grad = np.zeros(m)
    lt = math.log(t)
    for p, pat in enumerate(pats):
        q = 1.0
        dlogq = np.zeros(m)
        g = np.zeros(m)
        for n, x in enumerate(x0):
            tw = t ** w[x]
            if pat[n]:
                q *= tw
                dlogq[x] += lt
                mu = np.exp(logp[p, n])
                g -= mu
                g[x] += 1.0 + logp[p, n, x]
            else:
                q *= 1.0 - tw
                if tw < 1.0:
                    dlogq[x] -= tw * lt / (1.0 - tw)
        if q == 0.0:
            continue
        f = float(w @ g)
        grad += -(q / t) * (g + f * dlogq)
    return grad


# -----------------------------------------------------------------------------
# discrete time
# -----------------------------------------------------------------------------

def step_kl_enumerated(x0n: int, mu: np.ndarray, s: float, t: float, kernel: ForwardKernel) -> float:
    """KL between the true and model reverse steps for one masked token, by summing over x_s."""
    m = kernel.m
    q = kernel.reverse_posterior(m, x0n, s, t)
    xi = np.array([float(kernel.xi(v, s, t)) for v in range(m)])
    p = np.zeros(m + 1)
    p[:m] = xi * mu
    p[m] = float(((1.0 - xi) * mu).sum())
    kl = 0.0
    for k in range(m + 1):
        if q[k] > 0:
            kl += q[k] * math.log(q[k] / p[k])
    return kl


def exact_discrete(x0, T: int, predictor: Predictor, kernel: ForwardKernel, full: bool = False) -> float:
    x0 = np.asarray(x0)
    N, m = x0.size, kernel.m
    pats = mask_patterns(N)
    xs = _states(x0, pats, m)
    total = 0.0
    for i in range(2, T + 1):
        t, s = i / T, (i - 1) / T
        probs = _pattern_probs(x0, kernel, t, pats)
        mu = predictor.predict(xs, np.full(len(pats), t))
        for p, pat in enumerate(pats):
            for n in range(N):
                if pat[n]:
                    total += probs[p] * step_kl_enumerated(int(x0[n]), mu[p, n], s, t, kernel)
    if full:
        log_m = math.log(m)
        for x in x0:
            total += (1.0 - kernel.marginal(int(x), 1.0 / T)[x]) * log_m
            total += kernel.marginal(int(x), 1.0)[x] * log_m
    return total


# -----------------------------------------------------------------------------
# data-averaged quantities and exact posteriors
# -----------------------------------------------------------------------------

def all_sequences(m: int, N: int) -> np.ndarray:
    return np.array(list(itertools.product(range(m), repeat=N)), dtype=np.int64)


def bayes_table(data_probs: np.ndarray, m: int) -> np.ndarray:
    """Exact ``E[x0 | x_t]`` for a full-context tabular predictor, as log-probability logits.

    ``data_probs`` has shape ``(m,) * N``. The posterior given ``x_t`` does not
    depend on ``t``; it only depends on which positions are revealed.
    """
    from .predictor import TabularPredictor

    N = data_probs.ndim
    tab = TabularPredictor(m, N, "full")
    seqs = all_sequences(m, N)
    flat = data_probs.reshape(-1)
    for state in itertools.product(range(m + 1), repeat=N):
        state = np.array(state)
        consistent = np.all((state == m) | (seqs == state), axis=1)
        w = flat * consistent
        keys = tab.keys(state[None])[0]
        for n in range(N):
            if state[n] != m:
                continue
            post = np.array([w[seqs[:, n] == v].sum() for v in range(m)])
            if post.sum() == 0:
                post = np.ones(m)
            post = post / post.sum()
            tab.table[keys[n]] = np.log(np.maximum(post, 1e-300))
    return tab


def data_average(fn, data_probs: np.ndarray) -> float:
    m, N = data_probs.shape[0], data_probs.ndim
    return float(sum(data_probs[tuple(x)] * fn(x) for x in all_sequences(m, N) if data_probs[tuple(x)] > 0))


# -----------------------------------------------------------------------------
# exact per-draw variance of the single-sample estimators
# -----------------------------------------------------------------------------

def conditional_moments(kind: str, x0, predictor: Predictor, schedule: Schedule, t: float,
                        theta_only: bool = False):
    """Mean and second moment of one draw of the integrand at fixed ``t``.

    ``kind`` is ``ce``, ``ctmc`` or ``ctmc_ds``. The expectation runs over the
    mask pattern and, for ``ctmc_ds``, over the uniformly chosen position.
    ``theta_only`` drops the parameter-free part of the rate forms.
    """
    x0 = np.asarray(x0)
    N, m = x0.size, predictor.m
    kernel = ForwardKernel(schedule, m)
    tab = _Table(x0, predictor, kernel, [t])
    gam = float(schedule.ce_weight(t))
    beta = float(schedule.beta(t))
    mean = second = 0.0
    for p, pat in enumerate(tab.pats):
        prob = tab.probs[0, p]
        n_masked = int(pat.sum())
        kept = [n for n in range(N) if not pat[n]]
        if kind == "ce":
            val = gam * sum(tab.lp(0, p, n) for n in range(N) if pat[n])
            mean += prob * val
            second += prob * val * val
            continue
        base = 0.0 if theta_only else -gam * n_masked
        if not kept:
            mean += prob * base
            second += prob * base * base
            continue
        known = 0.0 if theta_only else xlogy(beta, -gam)
        terms = [known + beta * tab.lp(0, p | (1 << n), n) for n in kept]
        if kind == "ctmc":
            val = base - sum(terms)
            mean += prob * val
            second += prob * val * val
        elif kind == "ctmc_ds":
            K = len(kept)
            for term in terms:
                val = base - K * term
                mean += prob * val / K
                second += prob * val * val / K
        else:
            raise ValueError(f"unknown estimator kind {kind!r}")
    return mean, second


def exact_draw_variance(kind: str, x0, predictor: Predictor, schedule: Schedule,
                        t_min: float = T_MIN, antithetic: bool = False, theta_only: bool = False) -> float:
    """Variance of one draw ``(1 - t_min) * integrand`` with ``t ~ U(t_min, 1)``.

    With ``antithetic=True`` this is the variance of the average of an
    antithetic pair, which should be compared against half the plain variance.
    """
    scale = 1.0 - t_min

    def mean_at(t):
        return conditional_moments(kind, x0, predictor, schedule, t, theta_only)[0]

    mean = integrate(mean_at, t_min, 1.0)
    second = scale * integrate(lambda t: conditional_moments(kind, x0, predictor, schedule, t, theta_only)[1], t_min, 1.0)
    var = second - mean**2
    if not antithetic:
        return var

    def cross(u):
        return scale**2 * mean_at(t_min + scale * u) * mean_at(t_min + scale * (1.0 - u))

    cov = integrate(cross, 0.0, 1.0) - mean**2
    return 0.5 * (var + cov)
