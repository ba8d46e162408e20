from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from augur_sim.amounts import COIN, fmt, largest_remainder, to_decimal, to_fixed
from augur_sim.canonical import canonical_bytes, dumps, ftod, loads


def test_to_fixed_modes():
    assert to_fixed("0.01") == 1_000_000
    assert to_fixed(27.72588722239781) == 2_772_588_722
    assert to_fixed(Fraction(1, 3), "ceil") == 33_333_334
    assert to_fixed(Fraction(1, 3), "floor") == 33_333_333
    assert to_fixed(Decimal("0.000000005")) == 0  # half-even
    assert to_fixed(Decimal("0.000000015")) == 2
    with pytest.raises(TypeError):
        to_fixed(True)
    with pytest.raises(ValueError):
        to_fixed(float("nan"))


def test_to_decimal_and_fmt():
    assert to_decimal(1_000_000) == Decimal("0.01000000")
    assert fmt(5 * COIN) == "5.00000000"


@given(st.integers(0, 10**15))
def test_fixed_decimal_round_trip(units):
    assert to_fixed(to_decimal(units)) == units


@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=12), st.integers(0, 10**12))
def test_largest_remainder_is_exact(shares, total):
    out = largest_remainder(shares, total)
    assert sum(out) == total
    assert all(v >= 0 for v in out)
    s = sum(shares)
    assert all(abs(v - total * w / s) <= 1 + 1e-6 * total for v, w in zip(out, shares))


def test_largest_remainder_tie_break_by_key():
    assert largest_remainder([1, 1], 1, keys=["b", "a"]) == [0, 1]


def test_canonical_json_sorts_and_rejects_floats():
    assert dumps({"b": 1, "a": [True, None, Decimal("0.5")]}) == '{"a":[true,null,0.5],"b":1}'
    with pytest.raises(TypeError):
        canonical_bytes({"x": 0.5})
    assert loads('{"x": 0.1}')["x"] == Decimal("0.1")


def test_ftod_rounds_to_nine_places():
    assert ftod(1 / 3) == Decimal("0.333333333")
    assert not ftod(-1e-12).is_signed()
