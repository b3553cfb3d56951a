import math
import time

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pkdp.errors import NotExchangeable
from pkdp.fastpath import (
    ExchangeableScenario,
    FastEngine,
    apk_term_fast,
    binom_logpmf,
    binom_logpmf_table,
    binom_pmf,
    ppk_term_fast,
)
from pkdp.model import IIDBernoulli, ProductCategorical, BINARY
from pkdp.scenarios import constant, count, independent_reveal, prefix, subset, thresholded_count
from pkdp.scenarios import thresholding_example
from pkdp.verifier import ExactEngine


def mp_binom(m, trials, p):
    with mpmath.workdps(50):
        return float(mpmath.binomial(trials, m) * mpmath.mpf(p) ** m
                     * (1 - mpmath.mpf(p)) ** (trials - m))


def test_binom_examples():
    assert binom_pmf(1, 2, 0.5) == pytest.approx(0.5, rel=1e-15)
    assert binom_pmf(3, 3, 1.0) == 1
    assert binom_pmf(0, 0, 0.3) == 1
    want = mp_binom(0, 900, 1e-6)
    assert want == pytest.approx(0.9991, abs=1e-4)
    assert binom_pmf(0, 900, 1e-6) == pytest.approx(want, rel=1e-14)
    assert binom_logpmf(2, 3, 0.0) == -math.inf


@given(st.integers(0, 2000), st.floats(1e-9, 1 - 1e-9), st.data())
def test_binom_matches_mpmath(trials, p, data):
    m = data.draw(st.integers(0, trials))
    want = mp_binom(m, trials, p)
    got = binom_pmf(m, trials, p)
    if want > 1e-300:
        assert got == pytest.approx(want, rel=1e-11)


@pytest.mark.parametrize("trials", [1, 10, 99, 1000, 4321, 10**4])
@pytest.mark.parametrize("p", [1e-6, 0.01, 0.3, 0.5, 0.97])
def test_binom_sums_to_one(trials, p):
    table = np.exp(binom_logpmf_table(trials, p))
    assert math.fsum(table) == pytest.approx(1.0, abs=1e-12)


def _exchangeable(n, p, k, T, strict=True):
    mech = thresholded_count(T, n, strict=strict)
    return ExchangeableScenario.from_parts(IIDBernoulli(n, p), prefix(k, n), mech), mech


def test_apk_fast_small_example_matches_enumeration():
    sc, mech = _exchangeable(6, 0.1, 3, 3)
    eng = ExactEngine(mech, [IIDBernoulli(6, 0.1)], [prefix(3, 6)], targets=[3])
    want = eng.apk_term(0, 0, 3, 1, 0, (1, 1, 1), 0.0)
    assert want == pytest.approx(0.81, abs=1e-12)
    assert apk_term_fast(sc, 1, 0, 3, 0.0) == pytest.approx(want, abs=1e-12)


def test_constant_mechanism_is_zero():
    mech = constant(0, 5)
    sc = ExchangeableScenario.from_parts(IIDBernoulli(5, 0.3), prefix(2, 5), mech)
    assert apk_term_fast(sc, 1, 0, 2, 0.0) == 0
    assert ppk_term_fast(sc, 0, 1, 0.0) == 0


def test_two_coin_count_by_hand():
    # n=2, no knowledge, fair coins, target Yes vs No: outputs {1,2} vs {0,1}
    sc = ExchangeableScenario.from_parts(IIDBernoulli(2, 0.5), prefix(0, 2), count(2))
    assert apk_term_fast(sc, 1, 0, 0, 0.0) == pytest.approx(0.5, abs=1e-15)
    # at eps=ln 2 only output 2 (infinite loss) remains
    assert apk_term_fast(sc, 1, 0, 0, math.log(2)) == pytest.approx(0.5, abs=1e-15)
    assert ppk_term_fast(sc, 1, 0, 0.0) == pytest.approx(0.5, abs=1e-15)


def test_not_exchangeable_rejected():
    n = 4
    with pytest.raises(NotExchangeable):
        ExchangeableScenario.from_parts(ProductCategorical(BINARY, [[0.5, 0.5]] * n),
                                        prefix(1, n), count(n))
    with pytest.raises(NotExchangeable):
        ExchangeableScenario.from_parts(IIDBernoulli(n, 0.5), subset([1, 2], n), count(n))
    with pytest.raises(NotExchangeable):
        ExchangeableScenario.from_parts(IIDBernoulli(n, 0.5), independent_reveal(0.5, n),
                                        count(n))


def test_full_scale_is_fast():
    start = time.perf_counter()
    eng = FastEngine.for_scenario(thresholding_example())
    td = eng.tight_delta("ppk", 1.0)
    apk = eng.tight_delta("apk", 1.0)
    assert time.perf_counter() - start < 1.0
    assert td.delta < 1e-300
    assert apk.argmax.bhat == "prefix-sum=100/100"
    assert apk.delta == pytest.approx((1 - 1e-6) ** 899, rel=1e-12)


@given(st.integers(2, 9), st.sampled_from([0.1, 0.5, 0.77]), st.booleans(), st.data())
def test_agrees_with_exact_engine(n, p, strict, data):
    k = data.draw(st.integers(0, n - 1))
    T = data.draw(st.integers(0, n))
    eps = data.draw(st.sampled_from([0.0, 0.3, 1.0, math.inf]))
    sc, mech = _exchangeable(n, p, k, T, strict)
    i = n - 1
    eng = ExactEngine(mech, [IIDBernoulli(n, p)], [prefix(k, n)], targets=[i])
    values = eng.tables(0, 0, i).values
    for a, b in ((0, 1), (1, 0)):
        terms = eng.apk_terms(0, 0, i, a, b, eps)
        for v, term in zip(values, terms):
            assert apk_term_fast(sc, a, b, sum(v), eps) == pytest.approx(term, abs=1e-12)
        assert ppk_term_fast(sc, a, b, eps) == pytest.approx(
            eng.ppk_term(0, 0, i, a, b, eps), abs=1e-12)


@given(st.integers(3, 8), st.sampled_from([0.2, 0.5]), st.data())
def test_free_targets_are_interchangeable(n, p, data):
    k = data.draw(st.integers(0, n - 2))
    T = data.draw(st.integers(0, n))
    mech = thresholded_count(T, n)
    eng = ExactEngine(mech, [IIDBernoulli(n, p)], [prefix(k, n)])
    for a, b in ((0, 1), (1, 0)):
        first = eng.apk_terms(0, 0, k, a, b, 0.5)
        last = eng.apk_terms(0, 0, n - 1, a, b, 0.5)
        np.testing.assert_allclose(first, last, atol=1e-15)


def test_engine_matches_exact_tight_deltas():
    sc = thresholding_example(n=12, p=0.05, T=6, k=6)
    fast = FastEngine.for_scenario(sc)
    exact = ExactEngine.for_scenario(sc)
    for eps in (0.0, 1.0, math.inf):
        for model in ("dp", "apk", "ppk"):
            assert fast.tight_delta(model, eps).delta == pytest.approx(
                exact.tight_delta(model, eps).delta, abs=1e-12)
