"""Masking schedules.

A schedule gives the probability ``alpha(t)`` that a token is still unmasked at
time ``t`` in [0, 1]. All math is done in float64. Scalars in, floats out;
arrays in, arrays out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("linear", "polynomial", "geometric", "cosine")

DEFAULT_EPS = 1e-4
T_MIN = 1e-5


class ScheduleDomainError(ValueError):
    """Raised when a schedule is evaluated outside its domain."""


class SingularWeightError(ScheduleDomainError):
    """Raised when the cross-entropy weight is evaluated where alpha == 1."""


def _as_time(t, lo=0.0, hi=1.0, open_=False):
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ScheduleDomainError(f"non-finite time {t!r}")
    if open_:
        bad = (arr <= lo) | (arr >= hi)
    else:
        bad = (arr < lo) | (arr > hi)
    if np.any(bad):
        bracket = "(0, 1)" if open_ else "[0, 1]"
        raise ScheduleDomainError(f"time {t!r} outside {bracket}")
    return arr


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


@dataclass(frozen=True)
class Schedule:
    """Scalar masking schedule with an optional endpoint shift.

    ``alpha(t) = (1 - 2*eps) * alpha_raw(t) + eps``. ``w`` is only used by the
    polynomial kind and ``beta_min``/``beta_max`` only by the geometric kind.
    """

    kind: str = "linear"
    eps: float = DEFAULT_EPS
    w: float = 1.0
    beta_min: float = 1e-5
    beta_max: float = 20.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.eps <= 0.01:
            raise ValueError(f"eps must lie in [0, 0.01], got {self.eps}")
        if self.kind == "polynomial" and not self.w > 0:
            raise ValueError(f"polynomial exponent must be positive, got {self.w}")
        if self.kind == "geometric" and not (0 < self.beta_min < self.beta_max):
            raise ValueError("geometric schedule needs 0 < beta_min < beta_max")

    # raw (unshifted) pieces -------------------------------------------------
    def _geo_b(self, t):
        return self.beta_min ** (1.0 - t) * self.beta_max**t

    def _raw(self, t):
        """Return (alpha_raw, 1 - alpha_raw, d alpha_raw / dt)."""
        k = self.kind
        if k == "linear":
            return 1.0 - t, t, -np.ones_like(t)
        if k == "polynomial":
            with np.errstate(divide="ignore"):
                tw = t**self.w
                d = -self.w * t ** (self.w - 1.0)
            return 1.0 - tw, tw, d
        if k == "geometric":
            b = self._geo_b(t)
            a = np.exp(-b)
            return a, -np.expm1(-b), -a * b * math.log(self.beta_max / self.beta_min)
        half_pi = 0.5 * math.pi
        c = np.cos(half_pi * (1.0 - t))
        return 1.0 - c, c, -half_pi * np.sin(half_pi * (1.0 - t))

    def _shifted(self, t):
        a, one_minus_a, d = self._raw(t)
        s = 1.0 - 2.0 * self.eps
        return s * a + self.eps, s * one_minus_a + self.eps, s * d

    # public API -------------------------------------------------------------
    def alpha(self, t):
        t = _as_time(t)
        return _out(self._shifted(t)[0], t)

    def one_minus_alpha(self, t):
        """``1 - alpha(t)``, computed without cancellation near t = 0."""
        t = _as_time(t)
        return _out(self._shifted(t)[1], t)

    def alpha_prime(self, t):
        t = _as_time(t)
        return _out(self._shifted(t)[2], t)

    def ce_weight(self, t):
        """``alpha'(t) / (1 - alpha(t))``; negative on (0, 1]."""
        t = _as_time(t)
        _, om, d = self._shifted(t)
        if np.any(om <= 0.0):
            raise SingularWeightError("cross-entropy weight is singular where alpha(t) == 1")
        return _out(d / om, t)

    def beta(self, t):
        """Forward masking rate ``-alpha'(t) / alpha(t)``."""
        t = _as_time(t)
        a, _, d = self._shifted(t)
        if np.any(a <= 0.0):
            raise ScheduleDomainError("forward rate is infinite where alpha(t) == 0")
        return _out(-d / a, t)

    def log_snr(self, t):
        t = _as_time(t)
        a, om, _ = self._shifted(t)
        if np.any(a <= 0.0) or np.any(om <= 0.0):
            raise ScheduleDomainError("log-SNR undefined where alpha is 0 or 1")
        return _out(np.log(a) - np.log(om), t)

    def log_snr_inv(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        if not np.all(np.isfinite(lam)):
            raise ScheduleDomainError("log-SNR must be finite")
        s = 1.0 - 2.0 * self.eps
        # 1 - alpha = sigmoid(-lam); recover 1 - alpha_raw without cancellation
        om = 0.5 * (1.0 - np.tanh(0.5 * lam))
        om_raw = (om - self.eps) / s
        a_raw = 1.0 - om_raw
        if np.any(om_raw < 0.0) or np.any(om_raw > 1.0):
            raise ScheduleDomainError("log-SNR outside the range reachable by this schedule")
        k = self.kind
        if k == "linear":
            t = om_raw
        elif k == "polynomial":
            t = om_raw ** (1.0 / self.w)
        elif k == "geometric":
            b = -np.log(a_raw)
            t = np.log(b / self.beta_min) / math.log(self.beta_max / self.beta_min)
        else:
            t = 1.0 - np.arccos(np.clip(om_raw, -1.0, 1.0)) / (0.5 * math.pi)
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise ScheduleDomainError("log-SNR outside the range reachable by this schedule")
        return _out(t, lam)

    def spec(self) -> dict:
        return {"kind": self.kind, "eps": self.eps, "w": self.w,
                "beta_min": self.beta_min, "beta_max": self.beta_max}

    @classmethod
    def from_spec(cls, d: dict) -> "Schedule":
        return cls(**{k: d[k] for k in ("kind", "eps", "w", "beta_min", "beta_max") if k in d})


def linear(eps=DEFAULT_EPS) -> Schedule:
    return Schedule("linear", eps=eps)


def polynomial(w, eps=DEFAULT_EPS) -> Schedule:
    return Schedule("polynomial", eps=eps, w=w)


def geometric(beta_min=1e-5, beta_max=20.0, eps=DEFAULT_EPS) -> Schedule:
    return Schedule("geometric", eps=eps, beta_min=beta_min, beta_max=beta_max)


def cosine(eps=DEFAULT_EPS) -> Schedule:
    return Schedule("cosine", eps=eps)


@dataclass(frozen=True, eq=False)
class VectorSchedule:
    """Per-value schedules ``alpha_{t,i} = 1 - t**w_i`` for the ``m`` clean values.

    Methods return arrays of shape ``t.shape + (m,)``.
    """

    w: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        if w.size == 0 or not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise ValueError(f"all exponents must be finite and positive, got {w}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def m(self) -> int:
        return self.w.size

    def _tw(self, t):
        t = np.asarray(t, dtype=np.float64)[..., None]
        with np.errstate(divide="ignore"):
            return t**self.w

    def alpha(self, t):
        _as_time(t)
        return 1.0 - self._tw(t)

    def one_minus_alpha(self, t):
        _as_time(t)
        return self._tw(t)

    def alpha_prime(self, t):
        t = _as_time(t, open_=True)
        return -self.w * t[..., None] ** (self.w - 1.0)

    def ce_weight(self, t):
        t = _as_time(t, open_=True)
        return -self.w / t[..., None]

    def beta(self, t):
        t = _as_time(t, open_=True)
        tw = self._tw(t)
        return self.w * t[..., None] ** (self.w - 1.0) / (1.0 - tw)

    def spec(self) -> dict:
        return {"kind": "vector", "w": [float(x) for x in self.w]}
