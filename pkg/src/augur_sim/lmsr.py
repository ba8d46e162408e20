"""Logarithmic market scoring rule.

    cost(q)    = l * log(sum_j exp(q_j / l))
    price_i(q) = exp(q_i / l) / sum_j exp(q_j / l)      (softmax of q / l)

``l`` is the loss limit; the market maker's worst-case subsidy is
``l * log(N)``, which is also ``cost(0)``.  Price is the partial derivative
of cost with respect to ``q_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AugurError


class LmsrError(AugurError):
    code = "lmsr"


def _logsumexp(z: np.ndarray) -> float:
    m = float(np.max(z))
    return m + math.log(float(np.sum(np.exp(z - m))))


@dataclass(frozen=True)
class LmsrState:
    q: tuple[float, ...]
    loss_limit: float
    labels: tuple = field(default=(), compare=False)

    def __post_init__(self):
        q = tuple(float(x) for x in self.q)
        object.__setattr__(self, "q", q)
        ell = float(self.loss_limit)
        object.__setattr__(self, "loss_limit", ell)
        if not (math.isfinite(ell) and ell > 0):
            raise LmsrError(f"loss limit must be positive and finite, got {self.loss_limit!r}")
        if len(q) < 2:
            raise LmsrError("an LMSR needs at least two outcomes")
        for x in q:
            if not math.isfinite(x):
                raise LmsrError("share quantities must be finite")
            if x < 0:
                raise LmsrError("share quantities must be non-negative")
        if self.labels and len(self.labels) != len(q):
            raise LmsrError("one label per outcome")

    @classmethod
    def fresh(cls, loss_limit: float, n: int, labels: Sequence = ()) -> "LmsrState":
        return cls((0.0,) * n, loss_limit, tuple(labels))

    @property
    def n(self) -> int:
        return len(self.q)

    def with_trade(self, k: int, x: float) -> "LmsrState":
        q = list(self.q)
        q[k] += x
        if q[k] < 0:
            if q[k] > -1e-12 * max(1.0, abs(x)):
                q[k] = 0.0
            else:
                raise LmsrError(f"oversell: outcome {k} would hold {q[k]!r} shares")
        return LmsrState(tuple(q), self.loss_limit, self.labels)


def cost(state: LmsrState) -> float:
    ell = state.loss_limit
    return ell * _logsumexp(np.asarray(state.q) / ell)


def prices(state: LmsrState) -> list[float]:
    z = np.asarray(state.q) / state.loss_limit
    e = np.exp(z - np.max(z))
    return list(e / e.sum())


def price(state: LmsrState, i: int) -> float:
    if not 0 <= i < state.n:
        raise LmsrError(f"outcome index {i} out of range 0..{state.n - 1}")
    return prices(state)[i]


def trade_cost(state: LmsrState, k: int, x: float) -> float:
    """Bitcoin the trader pays for ``x`` shares of outcome ``k`` (negative when selling)."""
    if not 0 <= k < state.n:
        raise LmsrError(f"outcome index {k} out of range 0..{state.n - 1}")
    if x == 0:
        return 0.0
    if state.q[k] + x < 0:
        raise LmsrError(f"oversell: only {state.q[k]!r} shares of outcome {k} outstanding")
    return cost(state.with_trade(k, x)) - cost(state)


def binary_cost(q1: float, q2: float, loss_limit: float) -> float:
    return cost(LmsrState((q1, q2), loss_limit))


def max_loss(loss_limit: float, n_out: float) -> float:
    if n_out < 2:
        raise LmsrError("need at least two outcomes")
    return loss_limit * math.log(n_out)


def quote(state: LmsrState, k: int, x: float) -> dict:
    after = state.with_trade(k, x)
    return {
        "cost": trade_cost(state, k, x),
        "prices_before": prices(state),
        "prices_after": prices(after),
        "average_price": trade_cost(state, k, x) / x if x else prices(state)[k],
    }


@dataclass(frozen=True)
class ScalarMarketSpec:
    """Shares over a continuous outcome ``[a, b]``.

    ``density`` is either a sequence of per-bin share quantities on a uniform
    grid (piecewise constant) or a callable ``q(x)``.  A callable with jumps
    should list them in ``breakpoints`` so quadrature panels never straddle one.
    """

    a: float
    b: float
    density: Sequence[float] | Callable[[float], float]
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or self.a >= self.b:
            raise LmsrError(f"scalar bounds need a < b, got [{self.a}, {self.b}]")
        if not callable(self.density):
            d = np.asarray(self.density, dtype=float)
            if d.ndim != 1 or d.size == 0:
                raise LmsrError("density grid must be a non-empty vector")
            if not np.all(np.isfinite(d)):
                raise LmsrError("density must be finite")
            if np.any(d < 0):
                raise LmsrError("density must be non-negative")

    @classmethod
    def uniform(cls, a: float, b: float, bins: int = 256) -> "ScalarMarketSpec":
        return cls(a, b, (0.0,) * bins)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.a, self.b, len(self.density) + 1)


def _gauss_log_integral(f, a: float, b: float, ell: float, panels: int, order: int = 8) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = np.diff(edges)[:, None] / 2
    mid = (edges[:-1] + edges[1:])[:, None] / 2
    xs = mid + half * nodes[None, :]
    z = np.vectorize(f, otypes=[float])(xs) / ell
    if not np.all(np.isfinite(z)):
        raise LmsrError("density must be finite")
    logw = np.log(half * weights[None, :])
    return _logsumexp((z + logw).ravel())


def scalar_cost(spec: ScalarMarketSpec, loss_limit: float, rtol: float = 1e-8) -> float:
    """``l * log(integral_a^b exp(q(x)/l) dx)``.

    A binned density integrates exactly bin by bin.  A callable density uses
    composite Gauss-Legendre quadrature, doubling the panel count until the
    log-integral changes by less than ``rtol``.
    """
    ell = float(loss_limit)
    if not ell > 0:
        raise LmsrError("loss limit must be positive")
    if not callable(spec.density):
        d = np.asarray(spec.density, dtype=float)
        width = (spec.b - spec.a) / d.size
        return ell * (_logsumexp(d / ell) + math.log(width))
    cuts = [spec.a] + sorted(x for x in set(spec.breakpoints) if spec.a < x < spec.b) + [spec.b]
    parts = [_segment_log_integral(spec.density, lo, hi, ell, rtol) for lo, hi in zip(cuts, cuts[1:])]
    return ell * _logsumexp(np.asarray(parts))


def _segment_log_integral(f, a: float, b: float, ell: float, rtol: float) -> float:
    panels = 4
    prev = _gauss_log_integral(f, a, b, ell, panels)
    for _ in range(14):
        panels *= 2
        cur = _gauss_log_integral(f, a, b, ell, panels)
        if abs(cur - prev) <= rtol * max(1.0, abs(cur)):
            return cur
        prev = cur
    raise LmsrError("scalar quadrature did not converge; list the density's jumps as breakpoints")
