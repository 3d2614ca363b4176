"""Ancestral sampling: start from all masks and unmask over a uniform time grid.

Scalar schedule, per masked position and step ``t -> s``: unmask with
probability ``xi = (alpha_s - alpha_t) / (1 - alpha_t)``, drawing the value
from ``mu(x_t, t)``. Vector schedule: stay masked with probability
``sum_i (s/t)**w_i mu_i``, otherwise become ``i`` with ``(1 - (s/t)**w_i) mu_i``.
Unmasked positions never change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import Vocabulary
from .predictor import Predictor
from .rng import stream
from .schedule import T_MIN, Schedule, VectorSchedule


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 1000
    schedule: Schedule | VectorSchedule = field(default_factory=Schedule)
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


def _categorical(rng, probs):
    """One draw per row of ``probs`` (rows need not be exactly normalized)."""
    c = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1] + (1,)) * c[..., -1:]
    return np.minimum((u > c).sum(axis=-1), probs.shape[-1] - 1)


def _m(vocab) -> int:
    return vocab.m if isinstance(vocab, Vocabulary) else int(vocab)


def unmask_probability(schedule: Schedule, s: float, t: float) -> float:
    a_s, a_t = float(schedule.alpha(s)), float(schedule.alpha(t))
    return (a_s - a_t) / float(schedule.one_minus_alpha(t))


def genmd4_step_probs(mu, w, s: float, t: float) -> np.ndarray:
    """Distribution over ``[0, m]`` for one masked position; the last entry is staying masked."""
    decay = np.exp(np.asarray(w) * np.log(s / t)) if s > 0 else np.zeros_like(np.asarray(w, float))
    mu = np.asarray(mu)
    out = np.concatenate([(1.0 - decay) * mu, (decay * mu).sum(-1, keepdims=True)], axis=-1)
    return out


def reverse_step(x, s, t, predictor: Predictor, schedule, rng, temperature=1.0):
    """One reverse step on a batch ``x`` of shape ``(S, N)``; returns a new array."""
    m = predictor.m
    x = x.copy()
    masked = x == m
    if not masked.any():
        return x
    if isinstance(schedule, VectorSchedule):
        mu = predictor.predict(x, t, temperature)
        probs = genmd4_step_probs(mu[masked], schedule.w, s, t)
        x[masked] = _categorical(rng, probs)
        return x
    xi = unmask_probability(schedule, s, t)
    go = masked & (rng.random(x.shape) < xi)
    if go.any():
        mu = predictor.predict(x, t, temperature)
        x[go] = _categorical(rng, mu[go])
    return x


def _force(x, predictor, rng, temperature):
    m = predictor.m
    left = x == m
    if left.any():
        mu = predictor.predict(x, T_MIN, temperature)
        x = x.copy()
        x[left] = _categorical(rng, mu[left])
    return x


def _run(predictor, vocab, N, cfg, rng, num, stride):
    m = _m(vocab)
    if m != predictor.m:
        raise ValueError(f"predictor has {predictor.m} values, vocabulary has {m}")
    if rng is None:
        rng = stream(cfg.seed, "sample")
    T = cfg.steps
    x = np.full((num, N), m, dtype=np.int64)
    snaps = [x.copy()] if stride else None
    for i in range(T, 0, -1):
        x = reverse_step(x, (i - 1) / T, i / T, predictor, cfg.schedule, rng, cfg.temperature)
        if i == 1:
            x = _force(x, predictor, rng, cfg.temperature)
        if stride and (T - i + 1) % stride == 0:
            snaps.append(x.copy())
    return x, snaps


def sample(predictor: Predictor, vocab, N: int, cfg: SamplerConfig, rng=None, num: int = 1) -> np.ndarray:
    """``num`` clean sequences of length ``N``, shape ``(num, N)``."""
    return _run(predictor, vocab, N, cfg, rng, num, 0)[0]


def sample_genmd4(predictor: Predictor, vocab, N: int, v: VectorSchedule, cfg: SamplerConfig,
                  rng=None, num: int = 1) -> np.ndarray:
    cfg = SamplerConfig(cfg.steps, v, cfg.seed, cfg.temperature)
    return _run(predictor, vocab, N, cfg, rng, num, 0)[0]


def trajectory(predictor: Predictor, vocab, N: int, cfg: SamplerConfig, rng=None, num: int = 1,
               stride: int = 1) -> list[np.ndarray]:
    """Snapshots every ``stride`` steps: ``steps // stride + 1`` arrays, first all-mask."""
    if stride < 1 or cfg.steps % stride:
        raise ValueError(f"stride {stride} must divide steps {cfg.steps}")
    return _run(predictor, vocab, N, cfg, rng, num, stride)[1]


def render(x, decode, m: int, mask_char: str = "?") -> list[str]:
    """Decode rows to text with masked positions shown as ``mask_char``."""
    return ["".join(mask_char if v == m else decode(int(v)) for v in row) for row in np.atleast_2d(x)]
