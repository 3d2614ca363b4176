import numpy as np
import pytest

from mdc.predictor import TabularPredictor


def random_table(m, N, context="full", seed=0, scale=1.0):
    pred = TabularPredictor(m, N, context)
    pred.set_params(scale * np.random.default_rng(seed).normal(size=pred.params.size))
    return pred


@pytest.fixture
def tab32():
    """Full-context tabular predictor, m=3, N=2, random logits."""
    return random_table(3, 2)


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        request.config.stash[_VERDICTS].append(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
