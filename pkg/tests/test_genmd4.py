import math

import numpy as np
import pytest

from mdc import oracle
from mdc.genmd4 import (WGradient, f_scalar, g_vector, grad_log_q, pathwise_w_gradient, rloo_combine,
                        rloo_w_gradient)
from mdc.forward import ForwardKernel, InconsistentStateError
from mdc.predictor import TabularPredictor
from mdc.rng import stream
from mdc.schedule import T_MIN, ScheduleDomainError, VectorSchedule

from conftest import random_table


def shared(mu):
    return TabularPredictor(len(mu), 1, "shared", table=np.log(np.asarray(mu, float))[None])


# g and f -----------------------------------------------------------------------

def test_g_zero_without_masks():
    pred = random_table(3, 2)
    g = g_vector([0, 2], [0, 2], pred, 0.5)
    assert np.all(g == 0)
    assert f_scalar([1.0, 2.0, 3.0], g) == 0


def test_g_zero_for_one_hot_predictor():
    table = np.full((2, 3), -80.0)
    table[0, 1] = table[1, 2] = 0.0
    pred = TabularPredictor(3, 2, "positional", table=table)
    g = g_vector([1, 2], [3, 3], pred, 0.4)
    assert np.abs(g).max() < 1e-30


def test_g_hand_computation():
    pred = TabularPredictor(2, 2, "positional", table=np.log([[0.6, 0.4], [0.3, 0.7]]))
    g = g_vector([0, 1], [0, 2], pred, 0.5)
    # position 1 is masked with value 1: e_1 - mu + e_1 log mu_1
    expected = np.array([-0.3, 1.0 - 0.7 + math.log(0.7)])
    assert np.abs(g - expected).max() < 1e-12
    w = np.array([1.3, 0.7])
    assert f_scalar(w, g) == pytest.approx(w @ expected, abs=1e-12)


def test_g_rejects_inconsistent_state():
    with pytest.raises(InconsistentStateError):
        g_vector([0, 1], [1, 2], random_table(2, 2), 0.5)


# d/dw log q --------------------------------------------------------------------

def test_grad_log_q_examples():
    v = VectorSchedule([1.3, 0.7, 2.0])
    t = 0.35
    assert grad_log_q([1], [3], v, t)[1] == pytest.approx(math.log(t), abs=1e-15)
    tw = t**0.7
    assert grad_log_q([1], [1], v, t)[1] == pytest.approx(-tw * math.log(t) / (1 - tw), rel=1e-14)
    g = grad_log_q([0, 0], [3, 0], v, t)
    assert g[1] == 0 and g[2] == 0


def test_grad_log_q_matches_finite_differences():
    x0, xt, t, h = np.array([0, 2, 1, 0]), np.array([3, 2, 3, 0]), 0.6, 1e-6
    w = np.array([1.3, 0.7, 2.0])

    def logq(w):
        k = ForwardKernel(VectorSchedule(w))
        keep = k.keep_prob(x0, t)
        return float(np.sum(np.where(xt == 3, np.log1p(-keep), np.log(keep))))

    fd = np.array([(logq(w + h * e) - logq(w - h * e)) / (2 * h) for e in np.eye(3)])
    assert np.abs(grad_log_q(x0, xt, VectorSchedule(w), t) - fd).max() < 1e-6


@pytest.mark.parametrize("t", [0.0, 1.0])
def test_grad_log_q_domain(t):
    with pytest.raises(ScheduleDomainError):
        grad_log_q([0], [2], VectorSchedule([1.0, 1.0]), t)


# RLOO --------------------------------------------------------------------------

def test_identical_samples_give_zero_rloo_term():
    rng = np.random.default_rng(0)
    g, q = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    path, rloo = rloo_combine([1.0, 2.0, 0.5], np.full(4, 0.3), g, g, q, q)
    assert np.all(rloo == 0)
    assert np.allclose(path, -g / 0.3)


def test_swap_symmetry():
    rng = np.random.default_rng(1)
    w, t = rng.uniform(0.5, 2, 3), rng.uniform(0.1, 0.9, 5)
    g1, g2, q1, q2 = rng.normal(size=(4, 5, 3))
    a = sum(rloo_combine(w, t, g1, g2, q1, q2))
    b = sum(rloo_combine(w, t, g2, g1, q2, q1))
    assert np.array_equal(a, b)


def test_wgradient_validation():
    with pytest.raises(ValueError):
        WGradient(np.zeros(2), np.zeros(2), np.zeros(2), sample_count=3)
    with pytest.raises(FloatingPointError):
        WGradient(np.array([np.nan, 0.0]), np.zeros(2), np.zeros(2))
    est = WGradient(np.array([2.0, -1.0]), np.array([1.0, -1.0]), np.array([1.0, 0.0]))
    assert np.allclose(est.log_space([0.5, 3.0]), [1.0, -3.0])


def test_exact_gradient_matches_finite_differences():
    pred = random_table(3, 2, seed=4)
    w, t, h = np.array([1.3, 0.7, 2.0]), 0.45, 1e-6
    exact = oracle.genmd4_w_gradient([0, 2], pred, w, t)
    fd = [(oracle.genmd4_integrand([0, 2], pred, w + h * e, t)
           - oracle.genmd4_integrand([0, 2], pred, w - h * e, t)) / (2 * h) for e in np.eye(3)]
    assert np.allclose(exact, fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("m,N,x0,t", [(2, 1, [0], 0.4), (3, 2, [2, 0], 0.3), (3, 2, [1, 1], 0.8)])
def test_rloo_unbiased_and_pathwise_biased(m, N, x0, t):
    pred = random_table(m, N, "full" if N > 1 else "shared", seed=2)
    w = np.linspace(0.6, 1.8, m)
    exact = oracle.genmd4_w_gradient(x0, pred, w, t)
    draws = 100_000
    rows = np.tile(x0, (draws, 1))
    est = rloo_w_gradient(rows, pred, VectorSchedule(w), stream(0, "test-rloo"), t=t)
    se = est.per_draw.std(axis=0, ddof=1) / math.sqrt(draws)
    assert np.all(np.abs(est.grad_w - exact) <= 4 * se + 1e-12)
    assert np.allclose(est.grad_w, est.pathwise_term + est.rloo_term)
    naive = pathwise_w_gradient(rows, pred, VectorSchedule(w), stream(0, "test-path"), t=t)
    nse = naive.per_draw.std(axis=0, ddof=1) / math.sqrt(draws)
    present = np.isin(np.arange(m), x0)
    assert np.max((np.abs(naive.grad_w - exact) / nse)[present]) > 5


def test_perfect_predictor_zero_in_expectation():
    x0 = np.array([1, 0])
    table = np.full((2, 2), -60.0)
    table[[0, 1], x0] = 0.0
    pred = TabularPredictor(2, 2, "positional", table=table)
    draws = 20_000
    est = rloo_w_gradient(np.tile(x0, (draws, 1)), pred, VectorSchedule([0.8, 1.7]), stream(3, "test-perfect"))
    assert np.abs(est.grad_w).max() < 1e-20


def test_random_time_targets_integral():
    pred = shared([0.7, 0.3])
    w = np.array([1.3, 0.7])
    draws = 200_000
    est = rloo_w_gradient(np.zeros((draws, 1), dtype=np.int64), pred, VectorSchedule(w), stream(5, "test-int"))
    exact = [oracle.integrate(lambda t, i=i: oracle.genmd4_w_gradient([0], pred, w, t)[i], T_MIN, 1.0)
             for i in range(2)]
    se = est.per_draw.std(axis=0, ddof=1) / math.sqrt(draws)
    assert np.all(np.abs(est.grad_w - exact) <= 4 * se)
