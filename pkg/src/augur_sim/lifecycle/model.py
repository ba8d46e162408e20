"""Events, markets, branches and the registry that tracks them on the ledger."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Any

from .. import consensus as cons
from .. import lmsr
from ..amounts import COIN, to_decimal, to_fixed
from ..canonical import canonical_bytes
from ..crypto import CONTRACT_VERSION, encode_address, hash160
from ..errors import ValidationError

SHARES_PER_EVENT = 10**9 * COIN


@dataclass(frozen=True)
class LifecycleConfig:
    min_event_fee: int = to_fixed("0.01")
    quorum_required: int = 2
    reveal_window: int = 2          # blocks between quorum and redemption
    scalar_bins: int = 256
    slippage: Fraction = Fraction(5, 1000)
    reporter_share: Fraction = Fraction(1, 2)
    challenge_fee: int = to_fixed("0.01")
    challenge_window: int = 2       # blocks a feed resolution waits for challenges
    feed_threshold: Fraction = Fraction(95, 100)
    consensus: cons.ConsensusParams = field(default_factory=cons.ConsensusParams)

    def to_dict(self) -> dict:
        return {
            "min_event_fee": to_decimal(self.min_event_fee),
            "quorum_required": self.quorum_required,
            "reveal_window": self.reveal_window,
            "scalar_bins": self.scalar_bins,
            "slippage": str(self.slippage),
            "reporter_share": str(self.reporter_share),
            "challenge_fee": to_decimal(self.challenge_fee),
            "challenge_window": self.challenge_window,
            "feed_threshold": str(self.feed_threshold),
            "consensus": self.consensus.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LifecycleConfig":
        kw: dict[str, Any] = {}
        for k in ("min_event_fee", "challenge_fee"):
            if k in d:
                kw[k] = to_fixed(d[k])
        for k in ("quorum_required", "reveal_window", "scalar_bins", "challenge_window"):
            if k in d:
                kw[k] = int(d[k])
        for k in ("slippage", "reporter_share", "feed_threshold"):
            if k in d:
                kw[k] = Fraction(str(d[k]))
        if "consensus" in d:
            kw["consensus"] = cons.ConsensusParams.from_dict({**cons.ConsensusParams().to_dict(), **d["consensus"]})
        return cls(**kw)


def num(x) -> Decimal | int:
    """JSON-safe number: ints stay ints, everything else becomes a Decimal."""
    if isinstance(x, bool):
        raise ValidationError("booleans are not numbers", code="malformed")
    if isinstance(x, int):
        return x
    d = Decimal(str(x))
    if not d.is_finite():
        raise ValidationError("numbers must be finite", code="malformed")
    return d


def contract_address(h: str) -> str:
    return encode_address(bytes.fromhex(h), CONTRACT_VERSION)


def escrow_hash(branch: str) -> bytes:
    return hash160(b"reporter-escrow:" + branch.encode())


@dataclass(frozen=True)
class Event:
    description: str
    branch: str
    is_binary: bool
    valid_range: tuple
    expiration: int
    creator: str

    def __post_init__(self):
        if not self.description or not self.branch:
            raise ValidationError("events need a description and a branch", code="malformed")
        if not isinstance(self.expiration, int) or isinstance(self.expiration, bool):
            raise ValidationError("expiration must be an integer timestamp", code="malformed")
        r = self.valid_range
        if self.is_binary:
            if list(r) != [0, 1]:
                raise ValidationError("binary events have valid_range [0, 1]", code="malformed")
        elif all(isinstance(x, str) for x in r):
            if len(r) < 2 or len(set(r)) != len(r):
                raise ValidationError("categorical events need two or more distinct labels", code="malformed")
        elif len(r) == 2 and all(isinstance(x, (int, Decimal)) and not isinstance(x, bool) for x in r):
            if not r[0] < r[1]:
                raise ValidationError("scalar range needs a < b", code="malformed")
        else:
            raise ValidationError(f"unusable valid_range {list(r)!r}", code="malformed")

    @property
    def kind(self) -> str:
        if self.is_binary:
            return "binary"
        return "categorical" if isinstance(self.valid_range[0], str) else "scalar"

    def data(self) -> dict:
        return {
            "description": self.description,
            "branch": self.branch,
            "is_binary": self.is_binary,
            "valid_range": list(self.valid_range),
            "expiration": self.expiration,
            "creator": self.creator,
        }

    def data_bytes(self) -> bytes:
        return canonical_bytes(self.data())

    @property
    def id(self) -> str:
        return hash160(self.data_bytes()).hex()

    @property
    def address(self) -> str:
        return contract_address(self.id)

    def payload(self) -> dict:
        return {"id": self.id, **self.data()}

    @classmethod
    def from_data(cls, d: dict) -> "Event":
        keys = {"description", "branch", "is_binary", "valid_range", "expiration", "creator"}
        if not isinstance(d, dict) or set(d) - {"id"} != keys:
            raise ValidationError("event fields are not canonical", code="malformed")
        if not isinstance(d["is_binary"], bool) or not isinstance(d["valid_range"], list):
            raise ValidationError("event fields have the wrong types", code="malformed")
        ev = cls(d["description"], d["branch"], d["is_binary"], tuple(d["valid_range"]), d["expiration"], d["creator"])
        if "id" in d and d["id"] != ev.id:
            raise ValidationError("event id does not match its fields", code="malformed")
        return ev

    def outcome_count(self, bins: int | None) -> int:
        if self.kind == "binary":
            return 2
        if self.kind == "categorical":
            return len(self.valid_range)
        return int(bins or 0)

    def consensus_kind(self) -> str:
        if self.kind == "categorical":
            return f"categorical:{len(self.valid_range)}"
        return self.kind

    def normalize(self, value) -> Any:
        """Map a reported outcome onto the [0, 1] scale used by consensus."""
        if value is None or value == cons.INVALID:
            return value
        if isinstance(value, bool):
            raise ValidationError("report values are numbers, not booleans", code="malformed")
        if self.kind == "binary":
            if value not in (0, 1):
                raise ValidationError(f"binary report must be 0 or 1, got {value!r}", code="malformed")
            return Decimal(int(value))
        if self.kind == "categorical":
            k = len(self.valid_range)
            if value not in range(k):
                raise ValidationError(f"category index {value!r} out of range", code="malformed")
            return Decimal(int(value)) / Decimal(k - 1)
        a, b = (Decimal(str(x)) for x in self.valid_range)
        v = Decimal(str(value))
        if not a <= v <= b:
            raise ValidationError(f"scalar report {value!r} outside [{a}, {b}]", code="malformed")
        return (v - a) / (b - a)


def check_tag(event: Event, tag, bins: int | None) -> int:
    """Offset of an outcome tag within the event's outcome block."""
    if event.kind == "binary":
        if not isinstance(tag, bool):
            raise ValidationError("binary shares are tagged true or false", code="malformed")
        return int(tag)
    if isinstance(tag, bool) or not isinstance(tag, int) or not 0 <= tag < event.outcome_count(bins):
        raise ValidationError(f"bad outcome tag {tag!r}", code="malformed")
    return tag


@dataclass
class Market:
    title: str
    branch: str
    events: list[str]
    loss_limit: Decimal
    trading_fee: Decimal
    funding: int
    creator: str
    bins: int | None = None
    q: list[int] = field(default_factory=list)
    offsets: dict = field(default_factory=dict)     # event id -> (offset, count)
    state: str = "forecasting"
    close_prices: list[float] | None = None
    history: list = field(default_factory=list)

    def data(self) -> dict:
        d = {
            "title": self.title,
            "branch": self.branch,
            "events": list(self.events),
            "loss_limit": self.loss_limit,
            "tradingFee": self.trading_fee,
            "funding": to_decimal(self.funding),
            "creator": self.creator,
        }
        if self.bins is not None:
            d["bins"] = self.bins
        return d

    def data_bytes(self) -> bytes:
        return canonical_bytes(self.data())

    @property
    def id(self) -> str:
        return hash160(self.data_bytes()).hex()

    @property
    def pool_address(self) -> str:
        return contract_address(self.id)

    @property
    def n_out(self) -> int:
        return sum(c for _, c in self.offsets.values())

    def layout(self, registry: "Registry") -> None:
        off = 0
        for eid in self.events:
            c = registry.events[eid].outcome_count(self.bins)
            self.offsets[eid] = (off, c)
            off += c
        self.q = [0] * off

    def index(self, event: Event, tag) -> int:
        off, _ = self.offsets[event.id]
        return off + check_tag(event, tag, self.bins)

    def lmsr_state(self) -> lmsr.LmsrState:
        return lmsr.LmsrState(tuple(x / COIN for x in self.q), float(self.loss_limit))

    def prices(self) -> list[float]:
        return lmsr.prices(self.lmsr_state())

    def event_prices(self, eid: str, prices: list[float] | None = None) -> list[float]:
        """Outcome prices of one event, renormalized within the event."""
        p = prices if prices is not None else self.prices()
        off, c = self.offsets[eid]
        block = p[off : off + c]
        s = math.fsum(block)
        return [x / s for x in block]

    @classmethod
    def from_data(cls, d: dict) -> "Market":
        keys = {"title", "branch", "events", "loss_limit", "tradingFee", "funding", "creator"}
        if not isinstance(d, dict) or not keys <= set(d) or set(d) - keys - {"bins"}:
            raise ValidationError("market fields are not canonical", code="malformed")
        try:
            m = cls(
                d["title"], d["branch"], list(d["events"]), Decimal(d["loss_limit"]), Decimal(d["tradingFee"]),
                to_fixed(d["funding"]), d["creator"], d.get("bins"),
            )
        except (TypeError, ArithmeticError) as e:
            raise ValidationError(f"bad market field: {e}", code="malformed") from e
        if not (m.loss_limit > 0 and 0 <= m.trading_fee < 1):
            raise ValidationError("loss limit must be positive and tradingFee in [0, 1)", code="malformed")
        if not m.events or len(set(m.events)) != len(m.events):
            raise ValidationError("a market needs distinct events", code="malformed")
        if m.bins is not None and (isinstance(m.bins, bool) or not isinstance(m.bins, int) or m.bins < 2):
            raise ValidationError("scalar bins must be an integer >= 2", code="malformed")
        return m


@dataclass
class ReportRecord:
    txid: str
    value: int
    report: dict
    pubkey: str
    premature: bool


@dataclass
class Branch:
    name: str
    cycle: int = 0
    reports: dict = field(default_factory=dict)     # reporter address -> ReportRecord
    met: bool = False
    met_height: int | None = None
    challenged: set = field(default_factory=set)
    history: list = field(default_factory=list)


class Registry:
    """Ledger-side domain state; cloned wholesale with every ledger state."""

    def __init__(self, config: LifecycleConfig | None = None):
        self.config = config or LifecycleConfig()
        self.events: dict[str, Event] = {}
        self.event_keys: set = set()
        self.event_fees: dict[str, int] = {}
        self.event_market: dict[str, str] = {}
        self.markets: dict[str, Market] = {}
        self.branches: dict[str, Branch] = {}

    def clone(self) -> "Registry":
        memo = {id(self.config): self.config}
        return copy.deepcopy(self, memo)

    def market(self, mid: str) -> Market | None:
        return self.markets.get(mid)

    def peek(self, name: str) -> Branch:
        """The branch, or a blank one that is not registered; safe during validation."""
        return self.branches.get(name) or Branch(name)

    def branch(self, name: str) -> Branch:
        if name not in self.branches:
            self.branches[name] = Branch(name)
        return self.branches[name]

    def open_markets(self, branch: str) -> list[Market]:
        return [m for m in self.markets.values() if m.branch == branch and m.state != "redeemed"]

    def ballot(self, branch: str) -> list[str]:
        return [e for m in self.open_markets(branch) for e in m.events]

    def quorum(self, branch: str, now: int) -> dict:
        ballot = self.ballot(branch)
        b = self.branches.get(branch)
        matured = bool(ballot) and all(self.events[e].expiration <= now for e in ballot)
        reported = len(b.reports) if b else 0
        required = self.config.quorum_required
        return {"matured": matured, "reported": reported, "required": required, "met": matured and reported >= required}

    def on_block(self, height: int, now: int) -> None:
        """Quorum bookkeeping at the end of every block."""
        for name, b in self.branches.items():
            if b.met or not b.reports:
                continue
            if self.quorum(name, now)["met"]:
                b.met = True
                b.met_height = height
                for m in self.open_markets(name):
                    if m.state == "forecasting":
                        m.state = "closed"
                        m.close_prices = m.prices()

    def redemption_due(self, branch: str, height: int) -> bool:
        b = self.branches.get(branch)
        return bool(b and b.met and height >= b.met_height + self.config.reveal_window)
