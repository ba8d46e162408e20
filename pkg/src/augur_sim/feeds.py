"""Third-party outcome feeds.

Reputation holders query a feed source for each event, sign what they saw,
and the signed observations are tallied by reputation weight.  An event is
resolved automatically only when the modal outcome carries at least the
threshold share of the participating weight; anything less (including feeds
that disagree with each other) falls back to a reporting vote.
"""
from __future__ import annotations

import json
import logging
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping

from .amounts import to_decimal, to_fixed
from .canonical import canonical_bytes, dumps, loads
from .crypto import KeyPair, address_of, sign, verify
from .errors import AugurError

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = Fraction(95, 100)


class FeedUnavailable(AugurError):
    code = "feed-unavailable"


class LocalFileTransport:
    """JSON file mapping event id to outcome."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def fetch(self) -> dict:
        try:
            return loads(self.path.read_bytes())
        except (OSError, ValueError) as e:
            raise FeedUnavailable(f"{self.path}: {e}") from e


class StaticTransport:
    def __init__(self, mapping: Mapping | None):
        self.mapping = mapping

    def fetch(self) -> dict:
        if self.mapping is None:
            raise FeedUnavailable("source offline")
        return dict(self.mapping)


class HttpTransport:
    """GET a JSON document; optional and never used by the test suite."""

    def __init__(self, url: str, timeout: float = 5.0):
        self.url = url
        self.timeout = timeout

    def fetch(self) -> dict:
        try:
            with urllib.request.urlopen(self.url, timeout=self.timeout) as r:
                return json.loads(r.read(), parse_float=Decimal)
        except (urllib.error.URLError, TimeoutError, ValueError) as e:
            raise FeedUnavailable(f"{self.url}: {e}") from e


@dataclass(frozen=True)
class FeedSource:
    id: str
    transport: Any


def _norm(value):
    if isinstance(value, float):
        return Decimal(repr(value))
    return value


def observation_body(holder: str, event: str, value, weight: int) -> bytes:
    return canonical_bytes({"event": event, "holder": holder, "value": _norm(value), "weight": to_decimal(weight)})


def sign_observation(key: KeyPair, event: str, value, weight: int) -> dict:
    sig = sign(observation_body(key.address, event, value, weight), key)
    return {
        "holder": key.address,
        "event": event,
        "value": _norm(value),
        "weight": to_decimal(weight),
        "pubkey": key.public_key.hex(),
        "signature": sig.hex(),
    }


def verify_observation(obs: dict) -> bool:
    try:
        pub = bytes.fromhex(obs["pubkey"])
        sig = bytes.fromhex(obs["signature"])
        body = observation_body(obs["holder"], obs["event"], obs["value"], to_fixed(obs["weight"]))
    except (KeyError, TypeError, ValueError, ArithmeticError):
        return False
    return address_of(pub) == obs["holder"] and verify(body, sig, pub)


def collect(holders: Iterable[tuple[KeyPair, FeedSource]], events: list[str], weights: Mapping[str, int]) -> list[dict]:
    """One signed observation per (holder, event) the holder's source answered.

    Holders without reputation are skipped; an unreachable source makes its
    holder abstain.
    """
    out = []
    for key, source in holders:
        w = weights.get(key.address, 0)
        if w <= 0:
            continue
        try:
            answers = source.transport.fetch()
        except FeedUnavailable as e:
            log.info("holder %s abstains: %s", key.address, e)
            continue
        for ev in events:
            if ev in answers:
                out.append(sign_observation(key, ev, answers[ev], w))
    return out


@dataclass
class FeedAggregate:
    event: str
    tally: dict = field(default_factory=dict)   # canonical value -> weight
    total: int = 0
    threshold: Fraction = DEFAULT_THRESHOLD
    value: Any = None

    @property
    def resolved(self) -> bool:
        return self.value is not None

    @property
    def decision(self) -> str:
        return "resolved" if self.resolved else "vote-required"

    def to_dict(self) -> dict:
        return {
            "event": self.event,
            "tally": {k: to_decimal(v) for k, v in sorted(self.tally.items())},
            "total": to_decimal(self.total),
            "threshold": str(self.threshold),
            "decision": self.decision,
            "value": self.value,
        }


def aggregate(observations: Iterable[dict], threshold=DEFAULT_THRESHOLD) -> dict[str, FeedAggregate]:
    theta = Fraction(threshold) if not isinstance(threshold, float) else Fraction(str(threshold))
    if not Fraction(1, 2) < theta <= 1:
        raise ValueError("threshold must lie in (0.5, 1]")
    result: dict[str, FeedAggregate] = {}
    seen = set()
    for obs in observations:
        if not verify_observation(obs):
            log.warning("discarding observation with a bad signature from %s", obs.get("holder"))
            continue
        key = (obs["holder"], obs["event"])
        if key in seen:
            continue
        seen.add(key)
        agg = result.setdefault(obs["event"], FeedAggregate(obs["event"], threshold=theta))
        w = to_fixed(obs["weight"])
        v = dumps(obs["value"])
        agg.tally[v] = agg.tally.get(v, 0) + w
        agg.total += w
    for agg in result.values():
        if agg.total <= 0:
            continue
        best = max(sorted(agg.tally), key=lambda k: agg.tally[k])
        if Fraction(agg.tally[best], agg.total) >= theta:
            agg.value = loads(best)
    return result
