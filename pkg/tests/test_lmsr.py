import math
import random

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from augur_sim import lmsr
from augur_sim.amounts import to_fixed

mpmath.mp.dps = 50


def oracle_cost(q, ell):
    return ell * mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(x) / ell) for x in q))


def oracle_prices(q, ell):
    e = [mpmath.exp(mpmath.mpf(x) / ell) for x in q]
    s = mpmath.fsum(e)
    return [float(x / s) for x in e]


def test_zero_state_cost_is_max_loss():
    s = lmsr.LmsrState.fresh(40, 2)
    assert round(lmsr.cost(s), 8) == 27.72588722
    assert to_fixed(lmsr.max_loss(40, 2)) == 2_772_588_722
    assert to_fixed(lmsr.max_loss(1, 2)) == 69_314_718


def test_binary_cost_matches_general():
    assert lmsr.binary_cost(3, 7, 5) == pytest.approx(lmsr.cost(lmsr.LmsrState((3, 7), 5)), abs=1e-12)


@settings(max_examples=200)
@given(st.integers(2, 16).flatmap(lambda n: st.tuples(
    st.floats(0.1, 100), st.lists(st.floats(0, 1), min_size=n, max_size=n))))
def test_cost_and_prices_against_oracle(args):
    ell, frac = args
    q = [f * 10 * ell for f in frac]
    s = lmsr.LmsrState(tuple(q), ell)
    assert lmsr.cost(s) == pytest.approx(float(oracle_cost(q, ell)), rel=1e-12, abs=1e-12)
    p = lmsr.prices(s)
    assert math.fsum(p) == pytest.approx(1, abs=1e-12)
    assert p == pytest.approx(oracle_prices(q, ell), abs=1e-12)


def test_extreme_quantities_do_not_overflow():
    s = lmsr.LmsrState((1e6, 0.0), 0.1)
    assert lmsr.prices(s) == [1.0, 0.0]
    assert lmsr.cost(s) == pytest.approx(1e6)


def test_price_is_cost_gradient():
    rng = random.Random(3)
    for _ in range(50):
        n = rng.randint(2, 8)
        ell = rng.uniform(0.5, 50)
        q = [rng.uniform(0, 5 * ell) for _ in range(n)]
        s = lmsr.LmsrState(tuple(q), ell)
        for i in range(n):
            h = 1e-5 * ell
            fd = (lmsr.cost(s.with_trade(i, h)) - lmsr.cost(s.with_trade(i, -min(h, q[i])))) / (h + min(h, q[i]))
            assert fd == pytest.approx(lmsr.price(s, i), rel=1e-5)


def test_trade_cost_path_reversal():
    s = lmsr.LmsrState.fresh(40, 2)
    c = lmsr.trade_cost(s, 0, 10)
    assert lmsr.trade_cost(s.with_trade(0, 10), 0, -10) == pytest.approx(-c, abs=1e-10)


def test_oversell_and_bad_index():
    s = lmsr.LmsrState((1.0, 0.0), 10)
    with pytest.raises(lmsr.LmsrError):
        lmsr.trade_cost(s, 0, -2)
    with pytest.raises(lmsr.LmsrError):
        lmsr.trade_cost(s, 5, 1)
    with pytest.raises(lmsr.LmsrError):
        lmsr.LmsrState((0.0,), 1)
    with pytest.raises(lmsr.LmsrError):
        lmsr.LmsrState((0.0, 0.0), 0)


def test_quote_reports_prices_before_and_after():
    s = lmsr.LmsrState.fresh(10, 3)
    qt = lmsr.quote(s, 1, 2)
    assert qt["prices_before"] == pytest.approx([1 / 3] * 3)
    assert qt["prices_after"][1] > 1 / 3
    assert qt["average_price"] == pytest.approx(qt["cost"] / 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.floats(-20, 20)), min_size=1, max_size=50), st.floats(0.5, 20))
def test_market_maker_loss_is_bounded(trades, ell):
    s = lmsr.LmsrState.fresh(ell, 4)
    collected = 0.0
    for k, x in trades:
        x = max(x, -s.q[k])
        collected += lmsr.trade_cost(s, k, x)
        s = s.with_trade(k, x)
    worst = max(s.q) - collected
    assert worst <= ell * math.log(4) + 1e-9


def test_scalar_constant_density():
    for a, b, c, ell in [(0, 1, 0, 1), (-3, 7, 2.5, 4), (10, 11.5, 0.3, 0.2)]:
        expected = c + ell * math.log(b - a)
        assert lmsr.scalar_cost(lmsr.ScalarMarketSpec(a, b, lambda x, c=c: c), ell) == pytest.approx(expected, abs=1e-8)
        assert lmsr.scalar_cost(lmsr.ScalarMarketSpec(a, b, (c,) * 16), ell) == pytest.approx(expected, abs=1e-8)


def riemann(f, a, b, ell, n=10**6):
    x = a + (np.arange(n) + 0.5) * (b - a) / n
    z = np.vectorize(f, otypes=[float])(x) / ell if not hasattr(f, "vector") else f.vector(x) / ell
    m = z.max()
    return ell * (m + math.log(np.exp(z - m).sum() * (b - a) / n))


def test_scalar_step_density_matches_riemann():
    def step(x):
        return 3.0 if x < 0.37 else (1.0 if x < 0.8 else 5.0)
    step.vector = lambda x: np.where(x < 0.37, 3.0, np.where(x < 0.8, 1.0, 5.0))
    got = lmsr.scalar_cost(lmsr.ScalarMarketSpec(0, 1, step, breakpoints=(0.37, 0.8)), 2.0)
    assert got == pytest.approx(riemann(step, 0, 1, 2.0), abs=1e-6)
    grid = [3.0] * 37 + [1.0] * 43 + [5.0] * 20
    assert lmsr.scalar_cost(lmsr.ScalarMarketSpec(0, 1, grid), 2.0) == pytest.approx(riemann(step, 0, 1, 2.0), abs=1e-6)


def test_smooth_density_matches_riemann():
    f = math.sin
    f_vec = type("F", (), {"__call__": staticmethod(math.sin), "vector": staticmethod(np.sin)})()
    got = lmsr.scalar_cost(lmsr.ScalarMarketSpec(0, 6, f), 1.3)
    assert got == pytest.approx(riemann(f_vec, 0, 6, 1.3), abs=1e-6)


def test_unlisted_jump_does_not_converge():
    with pytest.raises(lmsr.LmsrError):
        lmsr.scalar_cost(lmsr.ScalarMarketSpec(0, 1, lambda x: 30.0 if x < 0.3333 else 0.0), 1.0)


def test_scalar_binned_density_is_exact():
    d = [0.0, 1.0, 4.0, 2.0]
    got = lmsr.scalar_cost(lmsr.ScalarMarketSpec(0, 2, d), 1.5)
    want = 1.5 * math.log(sum(0.5 * math.exp(x / 1.5) for x in d))
    assert got == pytest.approx(want, abs=1e-12)


def test_scalar_spec_validation():
    with pytest.raises(lmsr.LmsrError):
        lmsr.ScalarMarketSpec(1, 1, (0.0,))
    with pytest.raises(lmsr.LmsrError):
        lmsr.ScalarMarketSpec(0, 1, (-1.0,))
