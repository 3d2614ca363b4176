"""Masking schedules side by side, and why the choice barely matters for the loss.

Prints alpha, the cross-entropy weight and log-SNR for each built-in schedule,
then integrates the same fixed predictor's loss under each of them.

    python3 demos/schedules.py
"""

import numpy as np

from mdc import oracle
from mdc.forward import ForwardKernel
from mdc.predictor import TabularPredictor
from mdc.schedule import cosine, geometric, linear, polynomial

SCHEDULES = {"linear": linear(), "poly(2)": polynomial(2.0), "poly(0.5)": polynomial(0.5),
             "cosine": cosine(), "geometric": geometric()}


def table():
    ts = np.array([0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99])
    print(f"{'schedule':>10} {'t':>5} {'alpha':>9} {'weight':>11} {'log_snr':>9}")
    for name, s in SCHEDULES.items():
        for t in ts:
            print(f"{name:>10} {t:5.2f} {float(s.alpha(t)):9.5f} {float(s.ce_weight(t)):11.4f} "
                  f"{float(s.log_snr(t)):9.3f}")
        print()


def invariance():
    # time-independent predictor on 2 tokens over 3 values; endpoints pinned (eps = 0)
    rng = np.random.default_rng(0)
    pred = TabularPredictor(3, 2, "positional")
    pred.set_params(rng.normal(size=pred.params.size))
    x0 = [0, 2]
    print("integrated loss of one fixed predictor, endpoints alpha_0 = 1, alpha_1 = 0:")
    for name, s in (("linear", linear(0.0)), ("poly(2)", polynomial(2.0, 0.0)), ("cosine", cosine(0.0))):
        k = ForwardKernel(s, 3)
        val = oracle.integrate(lambda t: oracle.ce_integrand(x0, pred, k, t), 0.0, 1.0)
        print(f"  {name:>8}: {val:.10f} nats")


if __name__ == "__main__":
    table()
    invariance()
