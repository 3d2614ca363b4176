import numpy as np
import pytest
from scipy import stats

from mdc.forward import Vocabulary
from mdc.predictor import Predictor, TabularPredictor
from mdc.rng import stream
from mdc.sampler import (SamplerConfig, genmd4_step_probs, render, reverse_step, sample, sample_genmd4,
                         trajectory, unmask_probability)
from mdc.schedule import VectorSchedule, cosine, linear

from conftest import random_table


def oracle_token(p):
    return TabularPredictor(len(p), 1, "shared", table=np.log(np.asarray(p))[None])


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(steps=0)
    with pytest.raises(ValueError):
        SamplerConfig(temperature=0.0)


def test_unmask_probability_matches_schedule():
    s = cosine()
    a_s, a_t = float(s.alpha(0.3)), float(s.alpha(0.5))
    assert unmask_probability(s, 0.3, 0.5) == pytest.approx((a_s - a_t) / (1 - a_t), rel=1e-14)


@pytest.mark.parametrize("seed", [0, 1])
def test_unmask_timing_is_predictor_independent(seed):
    sched, s, t = linear(), 0.4, 0.7
    xi = unmask_probability(sched, s, t)
    n = 20_000
    for pred in (random_table(3, 4, "positional", seed=seed, scale=3.0), random_table(3, 4, "positional", seed=9)):
        x = np.full((n // 4, 4), 3)
        y = reverse_step(x, s, t, pred, sched, stream(seed, "timing"))
        k = int((y != 3).sum())
        sd = np.sqrt(n * xi * (1 - xi))
        assert abs(k - n * xi) <= 4 * sd


@pytest.mark.parametrize("T", [10, 100, 1000])
def test_single_token_marginal(T):
    p = np.array([0.2, 0.5, 0.3])
    num = 100_000 if T < 1000 else 20_000
    x = sample(oracle_token(p), 3, 1, SamplerConfig(T, linear(), 0), stream(T, "marg"), num=num)
    counts = np.bincount(x[:, 0], minlength=3)
    assert stats.chisquare(counts, p * num).pvalue >= 1e-3


def test_output_is_clean_and_accepts_vocabulary():
    pred = random_table(4, 6, "positional", seed=2)
    x = sample(pred, Vocabulary(4), 6, SamplerConfig(20, cosine(), 0), num=50)
    assert x.shape == (50, 6)
    assert x.min() >= 0 and x.max() < 4
    with pytest.raises(ValueError):
        sample(pred, 5, 6, SamplerConfig(20))


def test_trajectory_properties():
    pred = random_table(3, 8, "positional", seed=3)
    snaps = trajectory(pred, 3, 8, SamplerConfig(40, linear(), 1), num=5, stride=4)
    assert len(snaps) == 40 // 4 + 1
    assert np.all(snaps[0] == 3)
    assert np.all(snaps[-1] != 3)
    for a, b in zip(snaps, snaps[1:]):
        assert np.all((a == 3).sum(axis=1) >= (b == 3).sum(axis=1))
        kept = a != 3
        assert np.array_equal(a[kept], b[kept])
    with pytest.raises(ValueError):
        trajectory(pred, 3, 8, SamplerConfig(40), stride=3)


def test_seed_determinism():
    pred = random_table(3, 5, "positional", seed=4)
    cfg = SamplerConfig(30, cosine(), 7)
    a = sample(pred, 3, 5, cfg, num=10)
    b = sample(pred, 3, 5, cfg, num=10)
    c = sample(pred, 3, 5, SamplerConfig(30, cosine(), 8), num=10)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_temperature_leaves_timing_alone():
    pred = random_table(3, 4, "positional", seed=5)
    x = np.full((5000, 4), 3)
    cold = reverse_step(x, 0.4, 0.6, pred, linear(), stream(0, "temp"), temperature=0.1)
    hot = reverse_step(x, 0.4, 0.6, pred, linear(), stream(0, "temp"), temperature=5.0)
    assert np.array_equal(cold == 3, hot == 3)


# vector schedules ----------------------------------------------------------------

def test_genmd4_step_probs_sum_to_one():
    rng = np.random.default_rng(0)
    for _ in range(100):
        mu = rng.dirichlet(np.ones(5))
        w = rng.uniform(0.1, 5, 5)
        s, t = np.sort(rng.uniform(0.01, 1, 2))
        probs = genmd4_step_probs(mu, w, s, t)
        assert probs.min() >= 0
        assert abs(probs.sum() - 1) < 1e-12


def test_genmd4_unit_w_matches_linear():
    mu = np.array([0.1, 0.6, 0.3])
    s, t = 0.35, 0.8
    probs = genmd4_step_probs(mu, np.ones(3), s, t)
    xi = unmask_probability(linear(0.0), s, t)
    assert np.allclose(probs[:3], xi * mu, atol=1e-15)
    assert probs[3] == pytest.approx(1 - xi, abs=1e-15)


def test_staying_probability_decreases_with_w():
    mu = np.array([0.2, 0.5, 0.3])
    for s, t in [(0.5, 0.9), (0.1, 0.2), (0.89, 0.9)]:
        stay = [genmd4_step_probs(mu, np.array([1.0, wi, 1.0]), s, t)[-1] for wi in np.linspace(0.1, 10, 50)]
        assert np.all(np.diff(stay) <= 0)


class PosteriorToken(Predictor):
    """Exact posterior of a single masked token under a vector schedule: ``p_i t**w_i``, normalized."""

    def __init__(self, p, w):
        super().__init__()
        self.m, self.params = len(p), np.zeros(0)
        self.logp, self.w = np.log(p), np.asarray(w)

    def _logits(self, xt, t):
        z = self.logp + self.w * np.log(t)[:, None]
        return np.broadcast_to(z[:, None, :], xt.shape + (self.m,)).copy(), None


def test_genmd4_sampler_marginal():
    p, w = np.array([0.2, 0.5, 0.3]), np.array([0.5, 1.0, 3.0])
    num = 50_000
    x = sample_genmd4(PosteriorToken(p, w), 3, 1, VectorSchedule(w), SamplerConfig(50, seed=0), num=num)
    counts = np.bincount(x[:, 0], minlength=3)
    assert stats.chisquare(counts, p * num).pvalue >= 1e-3


def test_render():
    rows = render(np.array([[0, 2, 1], [2, 2, 2]]), lambda i: "ab"[i], 2)
    assert rows == ["a?b", "???"]
