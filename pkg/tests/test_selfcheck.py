import pytest

from mdc import selfcheck


def test_fresh_build_passes():
    results = selfcheck.run()
    names = [r.name for r in results]
    assert names == ["chapman_kolmogorov", "bayes_posterior", "loss_equivalence", "score_sum_rule",
                     "rloo_unbiased", "sampler_marginal", "entropy_floor"]
    for r in results:
        assert r.passed, r
        assert isinstance(r.observed, float) and r.tolerance > 0


def test_injected_fault_fails_sum_rule_only():
    results = {r.name: r for r in selfcheck.run("score_unconstrained")}
    assert not results["score_sum_rule"].passed
    assert results["score_sum_rule"].observed > results["score_sum_rule"].tolerance
    assert all(r.passed for name, r in results.items() if name != "score_sum_rule")


def test_unknown_fault():
    with pytest.raises(ValueError):
        selfcheck.run("nonsense")


def test_report_is_serializable():
    d = selfcheck.check_bayes_posterior().to_dict()
    assert set(d) == {"name", "passed", "observed", "tolerance", "detail"}
    assert d["passed"] is True
