"""Fixed-point token amounts.

Every ledger value is an ``int`` count of 1e-8 units (the tokens are divisible
to eight decimal places).  Conversion from real numbers happens only at the
ledger boundary, with an explicit rounding mode.
"""
from __future__ import annotations

import math
from decimal import ROUND_CEILING, ROUND_FLOOR, ROUND_HALF_EVEN, Decimal, localcontext
from fractions import Fraction

COIN = 100_000_000
DECIMALS = 8
_QUANT = Decimal(1).scaleb(-DECIMALS)

_MODES = {"half_even": ROUND_HALF_EVEN, "ceil": ROUND_CEILING, "floor": ROUND_FLOOR}


def to_fixed(x, rounding: str = "half_even") -> int:
    """Convert a number (int, str, Decimal, Fraction or float) to 1e-8 units."""
    if isinstance(x, bool):
        raise TypeError("bool is not an amount")
    if isinstance(x, int):
        return x * COIN
    if isinstance(x, Fraction):
        scaled = x * COIN
        if rounding == "ceil":
            return math.ceil(scaled)
        if rounding == "floor":
            return math.floor(scaled)
        return round(scaled)  # Fraction.__round__ is half-even
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"non-finite amount {x!r}")
        d = Decimal(x)  # exact binary value
    else:
        d = Decimal(str(x))
    if not d.is_finite():
        raise ValueError(f"non-finite amount {x!r}")
    with localcontext() as ctx:
        ctx.prec = 60
        q = d.quantize(_QUANT, rounding=_MODES[rounding])
        return int(q.scaleb(DECIMALS))


def to_decimal(units: int) -> Decimal:
    """Exact Decimal with eight places, e.g. ``1000000 -> Decimal('0.01000000')``."""
    return Decimal(units).scaleb(-DECIMALS).quantize(_QUANT)


def to_float(units: int) -> float:
    return units / COIN


def fmt(units: int) -> str:
    return str(to_decimal(units))


def largest_remainder(shares: list[float], total: int, keys: list | None = None) -> list[int]:
    """Apportion ``total`` integer units proportionally to ``shares``.

    The result sums to ``total`` exactly.  Ties on the fractional part are
    broken by ``keys`` (defaults to position), so callers that need
    permutation equivariance pass a stable identity per entry.
    """
    if total < 0:
        raise ValueError("total must be non-negative")
    s = float(sum(shares))
    if not shares:
        return []
    if s <= 0:
        raise ValueError("shares must have a positive sum")
    ideal = [total * (w / s) for w in shares]
    base = [int(math.floor(v)) for v in ideal]
    # float noise can push a floor over the total
    while sum(base) > total:
        i = max(range(len(base)), key=lambda j: base[j])
        base[i] -= 1
    remainder = total - sum(base)
    keys = keys if keys is not None else list(range(len(shares)))
    order = sorted(range(len(shares)), key=lambda j: (-(ideal[j] - base[j]), keys[j]))
    for j in order[:remainder]:
        base[j] += 1
    return base
