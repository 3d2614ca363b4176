"""Property checks on bundled tiny fixtures, each against an independent oracle."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from . import oracle
from .forward import ForwardKernel, dense_marginal, dense_transition
from .genmd4 import rloo_w_gradient
from .losses import ScoreView, boundary_terms, sum_rule_residual
from .predictor import TabularPredictor
from .rng import stream
from .sampler import SamplerConfig, sample
from .schedule import VectorSchedule, cosine, linear

FAULTS = ("score_unconstrained",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: float
    tolerance: float
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.observed = float(self.observed)

    def to_dict(self) -> dict:
        return asdict(self)


def _kernels(m=4):
    return [ForwardKernel(cosine(), m), ForwardKernel(VectorSchedule(np.linspace(0.5, 2.0, m)))]


def check_chapman_kolmogorov() -> CheckResult:
    worst = 0.0
    for k in _kernels():
        s, u, t = 0.2, 0.45, 0.8
        worst = max(worst, np.abs(dense_transition(k, s, u) @ dense_transition(k, u, t) - dense_transition(k, s, t)).max())
        worst = max(worst, np.abs(dense_marginal(k, s) @ dense_transition(k, s, t) - dense_marginal(k, t)).max())
    return CheckResult("chapman_kolmogorov", worst <= 1e-12, float(worst), 1e-12)


def check_bayes_posterior() -> CheckResult:
    worst = 0.0
    for k in _kernels():
        s, t = 0.3, 0.7
        qs, Qst = dense_marginal(k, s), dense_transition(k, s, t)
        for x0 in range(k.m):
            joint = qs[x0] * Qst[:, k.m]
            bayes = joint / joint.sum()
            worst = max(worst, np.abs(bayes - k.reverse_posterior(k.m, x0, s, t)).max())
    return CheckResult("bayes_posterior", worst <= 1e-12, float(worst), 1e-12)


def _tab_fixture(seed=0):
    rng = np.random.default_rng(seed)
    pred = TabularPredictor(3, 2, "full")
    pred.set_params(rng.normal(size=pred.params.size))
    return pred


def check_loss_equivalence() -> CheckResult:
    pred = _tab_fixture()
    k = ForwardKernel(linear(), 3)
    worst = 0.0
    for x0 in ([0, 2], [1, 1]):
        ce = oracle.exact_ce(x0, pred, k)
        sc = oracle.exact_score(x0, ScoreView(pred, k.schedule), k)
        value, known = oracle.exact_ctmc(x0, pred, k)
        worst = max(worst, abs(ce - sc), abs(ce - (value - known)))
    return CheckResult("loss_equivalence", worst <= 1e-9, float(worst), 1e-9,
                       "cross-entropy vs score entropy vs rate form (parameter-dependent part)")


def check_sum_rule(fault: str | None = None) -> CheckResult:
    pred = _tab_fixture(1)
    view = ScoreView(pred, cosine(), constrained=fault != "score_unconstrained")
    xt = np.array([[3, 3], [0, 3], [3, 2]])
    worst = max(sum_rule_residual(view, xt, t) for t in (0.1, 0.5, 0.9))
    return CheckResult("score_sum_rule", worst <= 1e-10, float(worst), 1e-10,
                       "masked scores must sum to alpha/(1 - alpha)")


def check_rloo_unbiased(draws: int = 40000, seed: int = 0) -> CheckResult:
    pred = TabularPredictor(2, 1, "shared", table=[[0.3, -0.4]])
    w, t = np.array([1.3, 0.7]), 0.4
    exact = oracle.genmd4_w_gradient([0], pred, w, t)
    est = rloo_w_gradient(np.zeros((draws, 1), dtype=np.int64), pred, VectorSchedule(w), stream(seed, "selfcheck-rloo"), t=t)
    sigma = est.per_draw.std(axis=0, ddof=1) / math.sqrt(draws)
    z = float(np.max(np.abs(est.grad_w - exact) / sigma))
    return CheckResult("rloo_unbiased", z <= 4.0, z, 4.0, "max |mean - exact| in standard errors")


def check_sampler_marginal(num: int = 20000, seed: int = 0) -> CheckResult:
    p = np.array([0.2, 0.5, 0.3])
    pred = TabularPredictor(3, 1, "shared", table=np.log(p)[None])
    x = sample(pred, 3, 1, SamplerConfig(10, linear(), seed), stream(seed, "selfcheck-sampler"), num=num)
    counts = np.bincount(x[:, 0], minlength=3)
    pval = float(stats.chisquare(counts, p * num).pvalue)
    return CheckResult("sampler_marginal", pval >= 1e-3, pval, 1e-3, "chi-square p-value (must be >= tolerance)")


def check_entropy_floor() -> CheckResult:
    """Exact negative ELBO of any predictor, averaged over data, is at least the data entropy."""
    data = np.array([[0.45, 0.05], [0.05, 0.45]])
    H = float(-(data * np.log(data)).sum())
    k = ForwardKernel(linear(), 2)
    worst = math.inf
    for pred in (oracle.bayes_table(data, 2), TabularPredictor(2, 2, "positional")):
        def nelbo(x, pred=pred):
            rec, prior = boundary_terms(np.asarray(x), k)
            return oracle.exact_ce(x, pred, k) + rec + prior
        worst = min(worst, oracle.data_average(nelbo, data) - H)
    return CheckResult("entropy_floor", worst >= -1e-9, float(worst), 1e-9, "min over predictors of NELBO - H")


CHECKS = (check_chapman_kolmogorov, check_bayes_posterior, check_loss_equivalence, check_sum_rule,
          check_rloo_unbiased, check_sampler_marginal, check_entropy_floor)


def run(fault: str | None = None) -> list[CheckResult]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    out = []
    for check in CHECKS:
        out.append(check(fault) if check is check_sum_rule else check())
    return out
