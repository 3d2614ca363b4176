"""Per-draw variance of the loss estimators on one sequence.

The analytic cross-entropy form integrates out the reverse jump, the CTMC form
keeps a rate term per unmasked position, and the doubly-stochastic variant
replaces that sum by one sampled position. All three share a mean (up to a
known constant); their spreads differ a lot. The antithetic column is noisy:
with an exact time-independent predictor the pairs are uncorrelated, so its
true value equals the plain variance, and the 1/t weight gives the sample
variance a heavy tail.

    python3 demos/estimator_variance.py
"""

import numpy as np

from mdc.forward import ForwardKernel
from mdc.losses import loss_continuous_ce, loss_ctmc
from mdc.predictor import TabularPredictor
from mdc.rng import stream
from mdc.schedule import linear

m, top, draws = 8, 0.7, 20_000
p = np.full(m, (1 - top) / (m - 1))
p[0] = top
k = ForwardKernel(linear(), m)

print(f"i.i.d. source over {m} values, P(0) = {top}; exact predictor; {draws} draws")
print(f"{'N':>4} {'ce mean':>9} {'ce var':>9} {'anti var x2':>11} {'ds var':>10} {'ds/ce':>6}")
for N in (4, 16, 64):
    pred = TabularPredictor(m, N, "shared", table=np.log(p)[None])
    x0 = stream(0, "demo-x0", N).choice(m, size=N, p=p)
    ce = loss_continuous_ce(x0, pred, k, stream(0, "demo-ce", N), draws=draws)
    anti = loss_continuous_ce(x0, pred, k, stream(0, "demo-anti", N), draws=draws, antithetic=True)
    ds = loss_ctmc(x0, pred, k, stream(0, "demo-ds", N), draws=draws, doubly_stochastic=True)
    print(f"{N:4d} {ce.value:9.3f} {ce.variance:9.2f} {2 * anti.variance:11.2f} {ds.variance:10.1f} "
          f"{ds.variance / ce.variance:6.2f}")
