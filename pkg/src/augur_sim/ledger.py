"""Unit-tagged UTXO ledger.

Every output carries a ``units`` tag (bitcoin, shares or reputation); values
are integer counts of 1e-8 units.  Validation checks unspent inputs, script
pairs, per-unit conservation and type-specific rules supplied by the caller.
Application is copy-and-swap: a new :class:`State` is built and only returned
when every step succeeded, so a failed apply leaves the old state untouched.
"""
from __future__ import annotations

import copy
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from . import script as sc
from .amounts import to_decimal, to_fixed
from .canonical import canonical_bytes, dumps, loads
from .crypto import USER_VERSION, encode_address, hash160, hash256
from .errors import ValidationError

log = logging.getLogger(__name__)


class Units(str, enum.Enum):
    BITCOIN = "bitcoin"
    SHARES = "shares"
    REPUTATION = "reputation"

    def __str__(self) -> str:
        return self.value


TX_TYPES = ("CreateEvent", "CreateMarket", "Buy", "Sell", "Report", "Redemption", "Transfer", "Faucet")
# Units a transaction type may create from nothing, or destroy.
MINTS = {"Faucet": set(Units), "CreateMarket": {Units.SHARES}}
BURNS = {"Redemption": {Units.SHARES}}


@dataclass
class TxIn:
    txid: str
    vout: int
    value: int
    units: Units
    script_sig: sc.Script
    extra: dict = field(default_factory=dict)

    def to_dict(self, n: int, blank_sig: bool = False) -> dict:
        d = {"n": n, "txid": self.txid, "vout": self.vout, "value": to_decimal(self.value), "units": self.units.value}
        d.update(self.extra)
        d["scriptSig"] = "" if blank_sig else str(self.script_sig)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TxIn":
        extra = {k: v for k, v in d.items() if k not in ("n", "txid", "vout", "value", "units", "scriptSig")}
        return cls(d["txid"], int(d["vout"]), to_fixed(d["value"]), Units(d["units"]), sc.Script.parse(d["scriptSig"]), extra)


@dataclass
class TxOut:
    value: int
    units: Units
    script: sc.Script
    fields: dict = field(default_factory=dict)

    @property
    def address(self) -> str | None:
        return self.fields.get("address")

    @property
    def event(self):
        return self.fields.get("event")

    @property
    def outcome(self):
        return self.fields.get("outcome")

    @property
    def report(self) -> dict | None:
        return self.fields.get("report")

    @property
    def owner(self) -> str | None:
        h = sc.owner_hash(self.script)
        if h is not None:
            return encode_address(h, USER_VERSION)
        return self.address

    def to_dict(self, n: int) -> dict:
        d = {"n": n, "value": to_decimal(self.value), "units": self.units.value}
        d.update(self.fields)
        d["script"] = str(self.script)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TxOut":
        fields = {k: v for k, v in d.items() if k not in ("n", "value", "units", "script")}
        return cls(to_fixed(d["value"]), Units(d["units"]), sc.Script.parse(d["script"]), fields)


@dataclass
class Transaction:
    type: str
    vin: list[TxIn] = field(default_factory=list)
    vout: list[TxOut] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self, blank_sigs: bool = False) -> dict:
        d: dict[str, Any] = {"type": self.type}
        d.update(self.meta)
        d["vin"] = [x.to_dict(i, blank_sigs) for i, x in enumerate(self.vin)]
        d["vout"] = [x.to_dict(i) for i, x in enumerate(self.vout)]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Transaction":
        try:
            meta = {k: v for k, v in d.items() if k not in ("type", "vin", "vout")}
            for i, x in enumerate(d["vin"]):
                if x.get("n") != i:
                    raise ValidationError(f"input {i} carries n={x.get('n')}", code="malformed")
            for i, x in enumerate(d["vout"]):
                if x.get("n") != i:
                    raise ValidationError(f"output {i} carries n={x.get('n')}", code="malformed")
            return cls(d["type"], [TxIn.from_dict(x) for x in d["vin"]], [TxOut.from_dict(x) for x in d["vout"]], meta)
        except ValidationError:
            raise
        except Exception as e:  # any structural defect in untrusted JSON
            raise ValidationError(f"cannot parse transaction: {e}", code="malformed") from e

    def serialize(self) -> bytes:
        return canonical_bytes(self.to_dict())

    @property
    def txid(self) -> str:
        return hash160(self.serialize()).hex()

    def sighash(self) -> bytes:
        return hash256(canonical_bytes(self.to_dict(blank_sigs=True)))

    def listing(self) -> str:
        return dumps(self.to_dict(), canonical=False, indent=4)


@dataclass
class LedgerConfig:
    block_interval: int = 600
    genesis_time: int = 1_478_000_000
    max_tx_size: int = 100_000
    max_block_size: int = 1_000_000
    limits: sc.Limits = field(default_factory=sc.Limits)

    def to_dict(self) -> dict:
        return {
            "block_interval": self.block_interval,
            "genesis_time": self.genesis_time,
            "max_tx_size": self.max_tx_size,
            "max_block_size": self.max_block_size,
        }


@dataclass
class State:
    utxos: dict = field(default_factory=dict)       # (txid, n) -> TxOut
    spent: set = field(default_factory=set)
    height: int = -1
    time: int = 0
    tip: str = "00" * 32
    domain: Any = None

    def copy(self) -> "State":
        dom = self.domain
        if dom is not None:
            dom = dom.clone() if hasattr(dom, "clone") else copy.deepcopy(dom)
        return State(dict(self.utxos), set(self.spent), self.height, self.time, self.tip, dom)

    def outputs(self, units: Units | None = None) -> Iterable[tuple[tuple[str, int], TxOut]]:
        for k in sorted(self.utxos):
            o = self.utxos[k]
            if units is None or o.units == units:
                yield k, o

    def balance(self, address: str, units: Units) -> int:
        return sum(o.value for o in self.utxos.values() if o.units == units and o.owner == address)

    def supply(self, units: Units) -> int:
        return sum(o.value for o in self.utxos.values() if o.units == units)

    def utxo_hash(self) -> str:
        rows = [[k[0], k[1], self.utxos[k].to_dict(k[1])] for k in sorted(self.utxos)]
        return hash256(canonical_bytes(rows)).hex()


class TxRule:
    """Type-specific validation; subclasses override what they need."""

    def check(self, state: State, tx: Transaction, spent: list[TxOut]) -> None:
        pass

    def skip_script(self, state: State, tx: Transaction, index: int, spent: TxOut) -> bool:
        return False

    def apply(self, state: State, tx: Transaction) -> None:
        pass


class FaucetRule(TxRule):
    """Simulator-only coinbase; reputation may only be minted in the genesis block."""

    def check(self, state, tx, spent):
        if tx.vin:
            raise ValidationError("faucet transactions have no inputs", code="malformed")
        for o in tx.vout:
            if o.units == Units.SHARES:
                raise ValidationError("the faucet cannot mint shares", code="unit-mismatch")
            if o.units == Units.REPUTATION and state.height >= 0:
                raise ValidationError("reputation supply is fixed after genesis", code="conservation")
            if not sc.is_p2pkh(o.script):
                raise ValidationError("faucet outputs must pay a key hash", code="malformed")


class TransferRule(TxRule):
    def check(self, state, tx, spent):
        if not all(sc.is_p2pkh(o.script) for o in spent):
            raise ValidationError("transfers may only spend pay-to-hash outputs", code="malformed")
        for o in tx.vout:
            if not sc.is_p2pkh(o.script):
                raise ValidationError("transfer outputs must pay a key hash", code="malformed")
            if o.units == Units.SHARES and (o.event is None or o.outcome is None):
                raise ValidationError("shares must keep their event and outcome", code="malformed")
        if share_positions(spent) != share_positions(tx.vout):
            raise ValidationError("shares must keep their event and outcome", code="conservation")


def share_positions(outputs: Iterable[TxOut]) -> dict:
    """Share totals keyed by (event, outcome)."""
    out: dict = {}
    for o in outputs:
        if o.units == Units.SHARES:
            key = (str(o.event), dumps(o.outcome))
            out[key] = out.get(key, 0) + o.value
    return out


DEFAULT_RULES: dict[str, TxRule] = {"Faucet": FaucetRule(), "Transfer": TransferRule()}


@dataclass
class ValidationReport:
    ok: bool
    txid: str
    code: str | None = None
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


def _sum(values: Iterable[tuple[Units, int]]) -> dict[Units, int]:
    out = {u: 0 for u in Units}
    for u, v in values:
        out[u] += v
    return out


def check(tx: Transaction, state: State, rules: dict[str, TxRule], config: LedgerConfig) -> list[TxOut]:
    """Raise :class:`ValidationError` unless ``tx`` may be applied to ``state``.

    Returns the outputs consumed by the inputs, aligned by position.
    """
    if tx.type not in TX_TYPES:
        raise ValidationError(f"unknown transaction type {tx.type!r}", code="malformed")
    if not tx.vout:
        raise ValidationError("transaction has no outputs", code="empty-vout")
    if tx.type != "Faucet" and not tx.vin:
        raise ValidationError("transaction has no inputs", code="malformed")
    if tx.type != "Redemption" and len(tx.serialize()) > config.max_tx_size:
        raise ValidationError("transaction exceeds the size limit", code="oversize")
    for o in tx.vout:
        if o.value < 0:
            raise ValidationError("negative output value", code="malformed")

    spent: list[TxOut] = []
    seen = set()
    for i, inp in enumerate(tx.vin):
        key = (inp.txid, inp.vout)
        if key in seen or key in state.spent:
            raise ValidationError(f"input {i} spends {inp.txid}:{inp.vout} twice", code="double-spend")
        seen.add(key)
        out = state.utxos.get(key)
        if out is None:
            raise ValidationError(f"input {i} references unknown output {inp.txid}:{inp.vout}", code="missing-input")
        if inp.units != out.units:
            raise ValidationError(f"input {i} declares {inp.units} but spends {out.units}", code="unit-mismatch")
        if inp.value != out.value:
            raise ValidationError(f"input {i} declares the wrong value", code="input-mismatch")
        spent.append(out)

    rule = rules.get(tx.type, TxRule())
    registry = state.domain if hasattr(state.domain, "market") else None
    cache: dict = {}
    for i, inp in enumerate(tx.vin):
        if rule.skip_script(state, tx, i, spent[i]):
            continue
        ctx = sc.ExecContext(tx, i, spent, registry=registry, limits=config.limits, cache=cache)
        reason = sc.evaluate(inp.script_sig, spent[i].script, ctx)
        if reason is not None:
            raise ValidationError(f"input {i} script failed: {reason.value}", code="script-failure")

    ins = _sum((o.units, o.value) for o in spent)
    outs = _sum((o.units, o.value) for o in tx.vout)
    for u in Units:
        if ins[u] == outs[u]:
            continue
        if outs[u] > ins[u] and u in MINTS.get(tx.type, ()):
            continue
        if outs[u] < ins[u] and u in BURNS.get(tx.type, ()):
            continue
        raise ValidationError(f"{u} not conserved: in {ins[u]}, out {outs[u]}", code="conservation")

    rule.check(state, tx, spent)
    return spent


def validate(tx: Transaction, state: State, rules: dict[str, TxRule] | None = None,
             config: LedgerConfig | None = None) -> ValidationReport:
    rules = DEFAULT_RULES if rules is None else rules
    try:
        check(tx, state, rules, config or LedgerConfig())
    except ValidationError as e:
        return ValidationReport(False, tx.txid, e.code, str(e))
    return ValidationReport(True, tx.txid)


def apply(tx: Transaction, state: State, rules: dict[str, TxRule] | None = None,
          config: LedgerConfig | None = None, fault: Callable[[int], None] | None = None) -> State:
    """Validate and apply ``tx``, returning a new state; ``state`` is never modified.

    ``fault`` is called after each output insertion (test hook).
    """
    rules = DEFAULT_RULES if rules is None else rules
    check(tx, state, rules, config or LedgerConfig())
    new = state.copy()
    txid = tx.txid
    for inp in tx.vin:
        key = (inp.txid, inp.vout)
        del new.utxos[key]
        new.spent.add(key)
    for n, out in enumerate(tx.vout):
        new.utxos[(txid, n)] = out
        if fault is not None:
            fault(n)
    rules.get(tx.type, TxRule()).apply(new, tx)
    return new


@dataclass
class Block:
    height: int
    timestamp: int
    prev_hash: str
    txs: list[Transaction]
    hash: str = ""

    @property
    def txids(self) -> list[str]:
        return [t.txid for t in self.txs]

    def header(self) -> dict:
        return {"height": self.height, "timestamp": self.timestamp, "prev_hash": self.prev_hash, "txids": self.txids}

    def compute_hash(self) -> str:
        return hash256(canonical_bytes(self.header())).hex()

    def to_dict(self) -> dict:
        d = self.header()
        d["hash"] = self.hash
        d["txs"] = [t.to_dict() for t in self.txs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        return cls(int(d["height"]), int(d["timestamp"]), d["prev_hash"],
                   [Transaction.from_dict(t) for t in d["txs"]], d.get("hash", ""))


@dataclass
class Rejection:
    tx: Transaction
    error: ValidationError


class Ledger:
    """Single-writer chain: a state plus the blocks that produced it."""

    def __init__(self, config: LedgerConfig | None = None, rules: dict[str, TxRule] | None = None,
                 domain: Any = None, on_block: Callable[[State], None] | None = None):
        self.config = config or LedgerConfig()
        self.rules = dict(DEFAULT_RULES) if rules is None else rules
        self.state = State(domain=domain, time=self.config.genesis_time - self.config.block_interval)
        self.blocks: list[Block] = []
        self.on_block = on_block

    def validate(self, tx: Transaction, state: State | None = None) -> ValidationReport:
        return validate(tx, state or self.state, self.rules, self.config)

    def apply(self, tx: Transaction, state: State | None = None, fault=None) -> State:
        return apply(tx, state or self.state, self.rules, self.config, fault)

    def balance(self, address: str, units: Units) -> int:
        return self.state.balance(address, units)

    @property
    def height(self) -> int:
        return self.state.height

    @property
    def time(self) -> int:
        return self.state.time

    def produce_block(self, pending: list[Transaction]) -> tuple[Block, list[Rejection]]:
        """Include pending transactions in submission order; invalid ones are rejected."""
        working = self.state
        accepted: list[Transaction] = []
        rejected: list[Rejection] = []
        size = 0
        for tx in pending:
            n = len(tx.serialize())
            if tx.type != "Redemption" and size + n > self.config.max_block_size:
                rejected.append(Rejection(tx, ValidationError("block is full", code="block-full")))
                continue
            try:
                working = self.apply(tx, working)
            except ValidationError as e:
                log.info("rejected %s %s: %s", tx.type, tx.txid, e)
                rejected.append(Rejection(tx, e))
                continue
            accepted.append(tx)
            if tx.type != "Redemption":
                size += n
        block = self._seal(working, accepted)
        return block, rejected

    def _seal(self, working: State, txs: list[Transaction]) -> Block:
        final = working.copy()
        final.height = self.state.height + 1
        final.time = self.config.genesis_time + final.height * self.config.block_interval
        block = Block(final.height, final.time, self.state.tip, txs)
        block.hash = block.compute_hash()
        final.tip = block.hash
        if self.on_block is not None:
            self.on_block(final)
        self.state = final
        self.blocks.append(block)
        return block

    def replay_block(self, block: Block) -> None:
        """Re-derive ``block`` from the current state; raise on any divergence."""
        if block.height != self.state.height + 1:
            raise ValidationError(f"expected height {self.state.height + 1}, got {block.height}", code="bad-block")
        if block.prev_hash != self.state.tip:
            raise ValidationError(f"block {block.height} does not extend the tip", code="bad-block")
        working = self.state
        for tx in block.txs:
            working = self.apply(tx, working)
        rebuilt = self._seal(working, block.txs)
        if rebuilt.hash != block.hash or rebuilt.timestamp != block.timestamp:
            raise ValidationError(f"block {block.height} hash mismatch", code="bad-block")

    def log_lines(self) -> list[str]:
        return [dumps(b.to_dict()) for b in self.blocks]

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "blocks.jsonl").write_text("".join(line + "\n" for line in self.log_lines()))
        snap = {
            "height": self.state.height,
            "tip": self.state.tip,
            "utxo_hash": self.state.utxo_hash(),
            "utxos": [[k[0], k[1], o.to_dict(k[1])] for k, o in self.state.outputs()],
        }
        (d / "utxo_snapshot.json").write_text(dumps(snap) + "\n")


def read_block_log(path: str | Path) -> list[Block]:
    blocks = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            blocks.append(Block.from_dict(loads(line)))
    return blocks
