"""Reputation-weighted PCA consensus over a report matrix.

Rows are reporters (weighted by reputation ``r_i``), columns are events.  The
pipeline is

1. impute missing entries with the reputation-weighted column mean and
   subtract that mean (centering);
2. unbiased weighted covariance ``R / (R^2 - sum r_i^2) * sum_i r_i c_i^T c_i``;
3. symmetric eigendecomposition, eigenvalues descending;
4. keep the fewest components whose cumulative explained variance reaches
   ``alpha`` and sum them into a coordination vector;
5. project each reporter onto that vector, map the projections to [0, 1]
   conformity scores, blend with prior reputation (zero-sum) and take
   conformity-and-reputation-weighted column means as outcomes.

Reporter values are expected in [0, 1]; callers normalize scalar and
categorical domains before building the matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Sequence

import numpy as np

from .amounts import largest_remainder
from .canonical import ftod
from .errors import ConsensusError

NO_REPORT = None
INVALID = "INVALID"
INVALID_VALUE = 0.5

# below this the covariance is treated as zero (unanimous reports)
_ZERO_VARIANCE = 1e-15


@dataclass(frozen=True)
class ConsensusParams:
    alpha: float = 0.9
    margin: float = 0.15
    blend_old: float = 0.8

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("variance threshold must lie in (0, 1]")
        if not 0 <= self.margin < 0.5:
            raise ValueError("resolution margin must lie in [0, 0.5)")
        if not 0 <= self.blend_old <= 1:
            raise ValueError("blend factor must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "alpha": ftod(self.alpha),
            "margin": ftod(self.margin),
            "blend_old": ftod(self.blend_old),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConsensusParams":
        return cls(float(d["alpha"]), float(d["margin"]), float(d["blend_old"]))


@dataclass
class ReportMatrix:
    reporters: list[str]
    events: list[str]
    weights: list[int]
    entries: list[list[Any]]
    kinds: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.kinds:
            self.kinds = ["binary"] * len(self.events)
        if not self.reporters or not self.events:
            raise ConsensusError("report matrix is empty", code="empty-matrix")
        if len(self.weights) != len(self.reporters) or len(self.entries) != len(self.reporters):
            raise ConsensusError("one weight and one row per reporter", code="malformed-matrix")
        if len(self.kinds) != len(self.events):
            raise ConsensusError("one kind per event", code="malformed-matrix")
        if len(set(self.reporters)) != len(self.reporters):
            raise ConsensusError("duplicate reporter row", code="malformed-matrix")
        for row in self.entries:
            if len(row) != len(self.events):
                raise ConsensusError("ragged report matrix", code="malformed-matrix")
            for x in row:
                if x is NO_REPORT or x == INVALID:
                    continue
                if isinstance(x, bool) or not isinstance(x, (int, float, Decimal)):
                    raise ConsensusError(f"bad report entry {x!r}", code="malformed-matrix")
                if not 0 <= float(x) <= 1:
                    raise ConsensusError(f"report entry {x!r} outside [0, 1]", code="malformed-matrix")
        if any(w <= 0 for w in self.weights):
            raise ConsensusError("reputation weights must be positive", code="malformed-matrix")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.reporters), len(self.events)

    def values(self) -> np.ndarray:
        """Float matrix with NaN for NO-REPORT and 0.5 for INVALID."""
        out = np.full(self.shape, np.nan)
        for i, row in enumerate(self.entries):
            for j, x in enumerate(row):
                if x is NO_REPORT:
                    continue
                out[i, j] = INVALID_VALUE if x == INVALID else float(x)
        return out

    def to_dict(self) -> dict:
        def enc(x):
            if x is NO_REPORT or x == INVALID:
                return x
            return ftod(float(x))

        return {
            "reporters": list(self.reporters),
            "events": list(self.events),
            "kinds": list(self.kinds),
            "weights": list(self.weights),
            "entries": [[enc(x) for x in row] for row in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReportMatrix":
        try:
            return cls(
                reporters=list(d["reporters"]),
                events=list(d["events"]),
                weights=[int(w) for w in d["weights"]],
                entries=[[x if x is None or x == INVALID else Decimal(x) for x in row] for row in d["entries"]],
                kinds=list(d["kinds"]),
            )
        except (KeyError, TypeError, ArithmeticError) as e:
            raise ConsensusError(f"malformed report matrix: {e}", code="malformed-matrix") from e


@dataclass
class CenteredMatrix:
    values: np.ndarray          # reporters x usable columns, weighted column mean zero
    means: np.ndarray           # weighted mean per usable column
    filled: np.ndarray          # imputed report values, usable columns
    present: np.ndarray         # bool mask of real (non-imputed) entries, all columns
    columns: list[int]          # indices of usable columns in the original matrix
    unresolvable: list[int]     # all-NO-REPORT columns


def center(matrix: ReportMatrix) -> CenteredMatrix:
    if len(matrix.reporters) < 2:
        raise ConsensusError("consensus needs at least two reporters", code="single-reporter")
    x = matrix.values()
    r = np.asarray(matrix.weights, dtype=float)
    present = ~np.isnan(x)
    columns = [j for j in range(x.shape[1]) if present[:, j].any()]
    unresolvable = [j for j in range(x.shape[1]) if not present[:, j].any()]
    filled = x[:, columns].copy()
    mask = present[:, columns]
    for k in range(filled.shape[1]):
        m = mask[:, k]
        filled[~m, k] = np.dot(r[m], filled[m, k]) / r[m].sum()
    means = r @ filled / r.sum()
    return CenteredMatrix(filled - means, means, filled, present, columns, unresolvable)


def weighted_covariance(centered: np.ndarray, weights: Sequence[float]) -> np.ndarray:
    """Unbiased reputation-weighted covariance of an already-centered matrix."""
    c = np.asarray(centered, dtype=float)
    r = np.asarray(weights, dtype=float)
    big_r = r.sum()
    denom = big_r * big_r - np.dot(r, r)
    if denom <= 0:
        raise ConsensusError("weighted covariance undefined for a single reporter", code="single-reporter")
    sigma = (big_r / denom) * (c.T @ (c * r[:, None]))
    return (sigma + sigma.T) / 2


def decompose(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors (columns) of a symmetric matrix.

    Each eigenvector is oriented so its largest-magnitude entry is positive;
    the data-dependent orientation happens later in :func:`analyze`.
    """
    s = np.asarray(sigma, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ConsensusError("covariance must be square", code="not-symmetric")
    if not np.allclose(s, s.T, rtol=0, atol=1e-12 * max(1.0, float(np.abs(s).max(initial=0)))):
        raise ConsensusError("covariance must be symmetric", code="not-symmetric")
    vals, vecs = np.linalg.eigh(s)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            vecs[:, k] = -col
    return vals, vecs


def select_components(eigenvalues: Sequence[float], alpha: float) -> tuple[int, list[float]]:
    lam = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    total = lam.sum()
    if total <= _ZERO_VARIANCE:
        raise ConsensusError("no variance in reports", code="unanimous")
    alpha_k = list(np.cumsum(lam) / total)
    alpha_k[-1] = 1.0
    # smallest k with alpha_k >= alpha; H[x] is 1 at x == 0
    n = next(k + 1 for k, a in enumerate(alpha_k) if alpha - a <= 1e-12)
    return n, alpha_k


def coordination_vector(vectors: np.ndarray, alpha_k: Sequence[float], alpha: float) -> np.ndarray:
    """Sum of the components needed to reach ``alpha`` explained variance.

    Component ``i`` is included when the variance explained *before* it is
    still short of ``alpha``, so the component that crosses the threshold
    counts.
    """
    s = np.asarray(vectors, dtype=float)
    v = np.zeros(s.shape[0])
    before = 0.0
    for i, a in enumerate(alpha_k):
        if alpha - before > 1e-12:
            v += s[:, i]
        before = a
    return v


def conformity(scores: np.ndarray) -> np.ndarray:
    """Shift by the worst score and scale to [0, 1]."""
    lo, hi = float(scores.min()), float(scores.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi), abs(lo)):
        return np.ones_like(scores)
    return (scores - lo) / (hi - lo)


@dataclass
class ConsensusAnalysis:
    covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    alpha_k: list[float]
    n: int
    v: np.ndarray
    projections: np.ndarray     # per reporter, onto v


def _weighted_col_means(x: np.ndarray, mask: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        m = mask[:, j]
        ww = w[m]
        out[j] = np.dot(ww, x[m, j]) / ww.sum() if ww.sum() > 0 else np.nan
    return out


def analyze(centered: CenteredMatrix, weights: Sequence[float], alpha: float) -> ConsensusAnalysis:
    """Covariance, components and an orientation favouring the weighted majority.

    Raises :class:`ConsensusError` with code ``unanimous`` when there is no
    variance to analyze.
    """
    r = np.asarray(weights, dtype=float)
    sigma = weighted_covariance(centered.values, r)
    lam, s = decompose(sigma)
    n, alpha_k = select_components(lam, alpha)
    reference = centered.means
    mask = np.ones_like(centered.filled, dtype=bool)
    for i in range(n):
        p = centered.values @ s[:, i]
        dist = []
        for sign in (1.0, -1.0):
            conf = conformity(sign * p)
            cand = _weighted_col_means(centered.filled, mask, r * conf)
            dist.append(float(np.nansum((cand - reference) ** 2)))
        if dist[1] < dist[0] - 1e-15:
            s[:, i] = -s[:, i]
    v = coordination_vector(s, alpha_k, alpha)
    return ConsensusAnalysis(sigma, lam, s, alpha_k, n, v, centered.values @ v)


def resolve(value: float | None, kind: str, margin: float):
    if value is None or np.isnan(value):
        return INVALID
    if kind == "scalar":
        return float(value)
    k = 2 if kind == "binary" else int(kind.split(":", 1)[1])
    pos = value * (k - 1)
    j = int(np.floor(pos + 0.5))
    if abs(pos - j) <= 0.5 - margin + 1e-12:
        return j
    return INVALID


@dataclass
class EventOutcome:
    event: str
    value: float | None
    resolved: Any


@dataclass
class ConsensusResult:
    outcomes: list[EventOutcome]
    reporters: list[str]
    old_reputation: list[int]
    new_reputation: list[int]
    conformity: list[float]
    degenerate: bool
    n: int | None = None
    alpha_k: list[float] = field(default_factory=list)
    eigenvalues: list[float] = field(default_factory=list)
    v: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        def enc_resolved(x):
            if x == INVALID or isinstance(x, int):
                return x
            return ftod(x)

        return {
            "outcomes": [
                {
                    "event": o.event,
                    "value": None if o.value is None else ftod(o.value),
                    "resolved": enc_resolved(o.resolved),
                }
                for o in self.outcomes
            ],
            "reputation": [
                {"reporter": a, "old": old, "new": new}
                for a, old, new in zip(self.reporters, self.old_reputation, self.new_reputation)
            ],
            "diagnostics": {
                "degenerate": self.degenerate,
                "n": self.n,
                "alpha_k": [ftod(a) for a in self.alpha_k],
                "eigenvalues": [ftod(x) for x in self.eigenvalues],
                "v": [ftod(x) for x in self.v],
                "conformity": [ftod(x) for x in self.conformity],
            },
        }


def redistribute(
    matrix: ReportMatrix,
    centered: CenteredMatrix,
    analysis: ConsensusAnalysis | None,
    params: ConsensusParams = ConsensusParams(),
) -> ConsensusResult:
    """Reputation update and outcomes; ``analysis=None`` is the unanimous path."""
    r = np.asarray(matrix.weights, dtype=float)
    cols = centered.columns
    present = centered.present[:, cols] if cols else np.zeros((len(r), 0), dtype=bool)
    participation = present.mean(axis=1) if cols else np.zeros(len(r))
    if analysis is None:
        conf = participation.copy()
    else:
        conf = conformity(analysis.projections) * participation

    total = int(sum(matrix.weights))
    if np.all(conf == conf[0]) or not conf.any():
        new_float = r.copy()
        new_rep = list(matrix.weights)
    else:
        earned = conf * r
        new_float = params.blend_old * r + (1 - params.blend_old) * total * earned / earned.sum()
        new_rep = largest_remainder(list(new_float), total, keys=list(matrix.reporters))

    outcomes: list[EventOutcome] = []
    x = matrix.values()
    for j, ev in enumerate(matrix.events):
        m = ~np.isnan(x[:, j])
        if not m.any():
            outcomes.append(EventOutcome(ev, None, INVALID))
            continue
        col = x[m, j]
        if np.all(col == col[0]):
            value = float(col[0])
        else:
            w = new_float[m]
            value = float(np.dot(w, col) / w.sum()) if w.sum() > 0 else float(np.dot(r[m], col) / r[m].sum())
        outcomes.append(EventOutcome(ev, value, resolve(value, matrix.kinds[j], params.margin)))

    return ConsensusResult(
        outcomes=outcomes,
        reporters=list(matrix.reporters),
        old_reputation=list(matrix.weights),
        new_reputation=[int(v) for v in new_rep],
        conformity=[float(c) for c in conf],
        degenerate=analysis is None,
        n=None if analysis is None else analysis.n,
        alpha_k=[] if analysis is None else list(analysis.alpha_k),
        eigenvalues=[] if analysis is None else list(analysis.eigenvalues),
        v=[] if analysis is None else list(analysis.v),
    )


def run(matrix: ReportMatrix, params: ConsensusParams = ConsensusParams()) -> ConsensusResult:
    centered = center(matrix)
    if not centered.columns:
        raise ConsensusError("every event column is empty", code="unresolvable")
    r = np.asarray(matrix.weights, dtype=float)
    try:
        analysis = analyze(centered, r, params.alpha)
    except ConsensusError as e:
        if e.code != "unanimous":
            raise
        analysis = None
    return redistribute(matrix, centered, analysis, params)


def reconstruction_error(sigma: np.ndarray, eigenvalues: np.ndarray, vectors: np.ndarray) -> float:
    recon = vectors @ np.diag(eigenvalues) @ vectors.T
    return float(np.abs(recon - sigma).max(initial=0.0))


def centered_to_json(values: np.ndarray) -> list[list[Decimal]]:
    return [[ftod(float(x)) for x in row] for row in np.atleast_2d(values)]
