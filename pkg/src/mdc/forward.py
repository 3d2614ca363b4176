"""Forward masking process, its time reversal given x0, and CTMC rate views.

Token ids live in ``[0, m]`` with ``m`` the mask id. Kernels are never stored
densely; ``dense_*`` helpers exist for enumeration tests only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import Schedule, VectorSchedule


class InvalidTokenError(ValueError):
    pass


class OrderingError(ValueError):
    pass


class InconsistentStateError(ValueError):
    """x_t is neither x0 nor the mask."""


@dataclass(frozen=True)
class Vocabulary:
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("vocabulary needs at least one clean value")

    @property
    def mask_id(self) -> int:
        return self.m

    def check(self, ids, clean=False):
        ids = np.asarray(ids)
        hi = self.m - 1 if clean else self.m
        if ids.size and (ids.min() < 0 or ids.max() > hi):
            what = "clean ids" if clean else "token ids"
            raise InvalidTokenError(f"{what} must lie in [0, {hi}]")
        return ids


class ForwardKernel:
    """Closed-form masking kernel for a scalar or a vector schedule."""

    def __init__(self, schedule: Schedule | VectorSchedule, m: int | None = None):
        self.schedule = schedule
        self.vector = isinstance(schedule, VectorSchedule)
        if self.vector:
            if m is not None and m != schedule.m:
                raise ValueError(f"vector schedule has {schedule.m} exponents, vocabulary has {m}")
            m = schedule.m
        if m is None:
            raise ValueError("m is required for a scalar schedule")
        self.vocab = Vocabulary(m)
        self.m = m

    # per-value survival probabilities --------------------------------------
    def alphas(self, t) -> np.ndarray:
        """Survival probability for every clean value, shape ``t.shape + (m,)``."""
        if self.vector:
            return self.schedule.alpha(t)
        a = np.asarray(self.schedule.alpha(t), dtype=np.float64)
        return np.broadcast_to(a[..., None], a.shape + (self.m,))

    def keep_prob(self, x0, t):
        """P(x_t = x0 | x0) for an id array ``x0``; ``t`` is a scalar or one time per row."""
        x0 = np.asarray(x0)
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 1 and x0.ndim == 2:
            t = t[:, None]
        if self.vector:
            return 1.0 - t ** self.schedule.w[x0]
        a = np.asarray(self.schedule.alpha(t), dtype=np.float64)
        return np.broadcast_to(a, np.broadcast_shapes(a.shape, x0.shape)).copy()

    def _alpha_at(self, x, t) -> float:
        """Survival probability of clean value ``x`` at scalar time ``t``."""
        if self.vector:
            return float(self.schedule.alpha(t)[x])
        return float(self.schedule.alpha(t))

    def _check_clean(self, x0):
        if not 0 <= x0 < self.m:
            raise InvalidTokenError(f"x0={x0} is not a clean id in [0, {self.m - 1}]")

    # single-token distributions --------------------------------------------
    def marginal(self, x0: int, t: float) -> np.ndarray:
        self._check_clean(x0)
        a = self._alpha_at(x0, t)
        p = np.zeros(self.m + 1)
        p[x0] = a
        p[self.m] = 1.0 - a
        return p

    def transition(self, xs: int, s: float, t: float) -> np.ndarray:
        if not s < t:
            raise OrderingError(f"need s < t, got s={s}, t={t}")
        self.vocab.check(xs)
        p = np.zeros(self.m + 1)
        if xs == self.m:
            p[self.m] = 1.0
            return p
        ratio = self._alpha_at(xs, t) / self._alpha_at(xs, s)
        p[xs] = ratio
        p[self.m] = 1.0 - ratio
        return p

    def xi(self, x0, s, t):
        """Probability that a masked token at t is unmasked (to x0) at s."""
        if self.vector:
            a_s = self.schedule.alpha(s)[..., x0]
            om_t = self.schedule.one_minus_alpha(t)[..., x0]
            a_t = 1.0 - om_t
        else:
            a_s = self.schedule.alpha(s)
            a_t = self.schedule.alpha(t)
            om_t = self.schedule.one_minus_alpha(t)
        return (a_s - a_t) / om_t

    def reverse_posterior(self, xt: int, x0: int, s: float, t: float) -> np.ndarray:
        if not s < t:
            raise OrderingError(f"need s < t, got s={s}, t={t}")
        self._check_clean(x0)
        self.vocab.check(xt)
        p = np.zeros(self.m + 1)
        if xt == self.m:
            xi = float(self.xi(x0, s, t))
            p[x0] = xi
            p[self.m] = 1.0 - xi
            return p
        if xt != x0:
            raise InconsistentStateError(f"x_t={xt} is neither x0={x0} nor the mask")
        p[xt] = 1.0
        return p

    # rates ------------------------------------------------------------------
    def forward_rate(self, t: float) -> "ForwardRate":
        if self.vector:
            beta = np.asarray(self.schedule.beta(t), dtype=np.float64)
        else:
            beta = np.full(self.m, self.schedule.beta(t))
        return ForwardRate(beta)

    def reverse_rate_given_x0(self, x0: int, t: float) -> "ReverseRate":
        self._check_clean(x0)
        if self.vector:
            gamma = float(self.schedule.ce_weight(t)[x0])
        else:
            gamma = float(self.schedule.ce_weight(t))
        onehot = np.zeros(self.m)
        onehot[x0] = 1.0
        return ReverseRate(gamma, onehot)

    # sequences ----------------------------------------------------------------
    def sample_forward(self, x0, t, rng: np.random.Generator) -> np.ndarray:
        """Mask each position of ``x0`` independently; ``t`` is a scalar or one time per row."""
        x0 = self.vocab.check(x0, clean=True)
        keep = self.keep_prob(x0, t)
        u = rng.random(x0.shape)
        return np.where(u < keep, x0, self.m)


@dataclass(frozen=True)
class ForwardRate:
    """``Q(t)``: clean value ``i`` jumps to the mask at rate ``beta[i]``."""

    beta: np.ndarray

    @property
    def m(self) -> int:
        return self.beta.size

    def entry(self, j: int, k: int) -> float:
        if j == self.m:
            return 0.0
        if k == j:
            return -float(self.beta[j])
        if k == self.m:
            return float(self.beta[j])
        return 0.0

    def row(self, j: int) -> np.ndarray:
        r = np.zeros(self.m + 1)
        if j != self.m:
            r[j] = -self.beta[j]
            r[self.m] = self.beta[j]
        return r

    def dense(self) -> np.ndarray:
        return np.stack([self.row(j) for j in range(self.m + 1)])


@dataclass(frozen=True)
class ReverseRate:
    """``R(t) = -gamma * e_m (p - e_m)^T`` with ``gamma = alpha'/(1 - alpha) < 0``.

    ``p`` is the clean-value distribution substituted for x0 (one-hot for the
    true reverse rate, the model's prediction for the approximate one).
    """

    gamma: float
    p: np.ndarray

    @property
    def m(self) -> int:
        return self.p.size

    def row(self, j: int) -> np.ndarray:
        r = np.zeros(self.m + 1)
        if j == self.m:
            r[: self.m] = -self.gamma * self.p
            r[self.m] = self.gamma * self.p.sum()
        return r

    def entry(self, j: int, k: int) -> float:
        return float(self.row(j)[k])

    def dense(self) -> np.ndarray:
        return np.stack([self.row(j) for j in range(self.m + 1)])


# dense materialization, test utilities ---------------------------------------

def dense_marginal(k: ForwardKernel, t: float) -> np.ndarray:
    """``Qbar(t)``; row ``x0`` is ``q(x_t | x0)``; the mask row is absorbing."""
    out = np.zeros((k.m + 1, k.m + 1))
    for x0 in range(k.m):
        out[x0] = k.marginal(x0, t)
    out[k.m, k.m] = 1.0
    return out


def dense_transition(k: ForwardKernel, s: float, t: float) -> np.ndarray:
    return np.stack([k.transition(j, s, t) for j in range(k.m + 1)])


def dense_reverse(k: ForwardKernel, x0: int, s: float, t: float) -> np.ndarray:
    """``Rbar^{x0}(t, s)``; rows indexed by x_t. The row for x_t not in {x0, m} is identity by convention."""
    out = np.eye(k.m + 1)
    out[k.m] = k.reverse_posterior(k.m, x0, s, t)
    return out
