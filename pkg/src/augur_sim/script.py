"""Stack-based script interpreter.

Scripts are sequences of data pushes and opcodes from a closed set: the four
pay-to-pubkey-hash opcodes plus the prediction-market extensions.  Text form
is whitespace-separated tokens, ``OP_*`` for opcodes and ``<hex>`` for pushes.

An input is valid when its unlocking script followed by the locking script of
the output it spends leaves exactly one truthy item on a shared stack.

Market-bound unlocking scripts push ``<market hash> <market data> <event data>``
where the data items are canonical JSON of the market (without its id) and of
the event (without its id).  Report outputs are unlocked by
``<report matrix> <centered report matrix> <public key>``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from . import consensus as cons
from .canonical import canonical_bytes, loads
from .crypto import address_of, hash160, verify
from .errors import AugurError, ScriptError

TRUE = b"\x01"
FALSE = b""
PCA_TOLERANCE = 1e-9
RECONSTRUCTION_TOLERANCE = 1e-10


class Op(enum.IntEnum):
    OP_DUP = 0x76
    OP_EQUALVERIFY = 0x88
    OP_HASH160 = 0xA9
    OP_CHECKSIG = 0xAC
    OP_MARKETCHECK = 0xC0
    OP_EVENTLOOKUP = 0xC1
    OP_ISBITCOIN = 0xC2
    OP_ISSHARES = 0xC3
    OP_DATACHECK = 0xC4
    OP_CONSENSUS = 0xC5
    OP_PCACHECK = 0xC6


# The report listing spells the data-check opcode OP_CHECKDATA.
ALIASES = {"OP_CHECKDATA": Op.OP_DATACHECK}


class Failure(str, enum.Enum):
    UNDERFLOW = "stack-underflow"
    VERIFY_FAILED = "verify-failed"
    UNKNOWN_OPCODE = "unknown-opcode"
    LOOKUP_MISS = "lookup-miss"
    MALFORMED = "malformed-data"
    LIMIT = "limit-exceeded"
    FALSE_RESULT = "false-result"
    CONSENSUS = "consensus-error"


class ScriptFailure(ScriptError):
    def __init__(self, reason: Failure, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value, code=reason.value)
        self.reason = reason


class ScriptParseError(AugurError):
    code = "unknown-opcode"


@dataclass(frozen=True)
class Script:
    items: tuple  # Op | bytes

    @classmethod
    def parse(cls, text: str) -> "Script":
        items: list = []
        for tok in text.split():
            if tok.startswith("<") and tok.endswith(">"):
                try:
                    items.append(bytes.fromhex(tok[1:-1]))
                except ValueError as e:
                    raise ScriptParseError(f"bad push {tok!r}") from e
            elif tok in ALIASES:
                items.append(ALIASES[tok])
            elif tok in Op.__members__:
                items.append(Op[tok])
            else:
                raise ScriptParseError(f"unknown opcode {tok!r}")
        return cls(tuple(items))

    @classmethod
    def of(cls, *items) -> "Script":
        return cls(tuple(items))

    def __str__(self) -> str:
        return " ".join(f"<{x.hex()}>" if isinstance(x, bytes) else x.name for x in self.items)

    def to_bytes(self) -> bytes:
        out = bytearray()
        for x in self.items:
            if isinstance(x, Op):
                out.append(int(x))
                continue
            n = len(x)
            if n < 0x4C:
                out.append(n)
            elif n <= 0xFF:
                out += bytes([0x4C, n])
            elif n <= 0xFFFF:
                out += bytes([0x4D]) + n.to_bytes(2, "little")
            else:
                out += bytes([0x4E]) + n.to_bytes(4, "little")
            out += x
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Script":
        items: list = []
        i = 0
        while i < len(raw):
            b = raw[i]
            i += 1
            if b < 0x4C:
                n = b
            elif b == 0x4C:
                n, i = raw[i], i + 1
            elif b == 0x4D:
                n, i = int.from_bytes(raw[i : i + 2], "little"), i + 2
            elif b == 0x4E:
                n, i = int.from_bytes(raw[i : i + 4], "little"), i + 4
            else:
                try:
                    items.append(Op(b))
                except ValueError as e:
                    raise ScriptParseError(f"unknown opcode byte 0x{b:02x}") from e
                continue
            if i + n > len(raw):
                raise ScriptParseError("push runs past end of script")
            items.append(bytes(raw[i : i + n]))
            i += n
        return cls(tuple(items))


@dataclass
class Limits:
    max_stack: int = 1000
    max_item: int = 4_000_000


@dataclass
class ExecContext:
    """What an opcode may look at besides the stack.

    ``tx`` is the spending transaction and ``spent`` the outputs its inputs
    consume, aligned by position.  ``registry`` optionally exposes ledger
    lookups (``market(id)``); ``cache`` memoizes consensus runs across the
    inputs of one transaction.
    """

    tx: Any
    input_index: int
    spent: list
    registry: Any = None
    limits: Limits = field(default_factory=Limits)
    cache: dict = field(default_factory=dict)

    @property
    def spent_output(self):
        return self.spent[self.input_index]

    @property
    def meta(self) -> dict:
        return getattr(self.tx, "meta", {}) or {}


def is_true(item: bytes) -> bool:
    return any(item)


def _pop(stack: list, n: int = 1) -> list:
    if len(stack) < n:
        raise ScriptFailure(Failure.UNDERFLOW, f"need {n} items, have {len(stack)}")
    out = stack[-n:]
    del stack[-n:]
    return out


def _json(item: bytes, what: str) -> Any:
    try:
        obj = loads(item)
    except ValueError as e:
        raise ScriptFailure(Failure.MALFORMED, f"{what} is not JSON") from e
    if canonical_bytes(obj) != item:
        raise ScriptFailure(Failure.MALFORMED, f"{what} is not canonical")
    return obj


def _market_events(md: dict) -> list[str]:
    events = md.get("events") if isinstance(md, dict) else None
    if not isinstance(events, list):
        raise ScriptFailure(Failure.MALFORMED, "market data lacks an event list")
    return events


def _market_ref(ctx: ExecContext) -> str | None:
    meta = ctx.meta
    if getattr(ctx.tx, "type", None) == "CreateMarket":
        return meta.get("id")
    return meta.get("market")


def op_checksig(stack: list, ctx: ExecContext) -> None:
    sig, pubkey = _pop(stack, 2)
    ok = verify(ctx.tx.sighash(), sig, pubkey)
    stack.append(TRUE if ok else FALSE)


def op_marketcheck(stack: list, ctx: ExecContext) -> None:
    mh, md_raw, ed = _pop(stack, 3)
    md = _json(md_raw, "market data")
    _json(ed, "event data")
    if hash160(md_raw) != mh:
        raise ScriptFailure(Failure.VERIFY_FAILED, "market data does not hash to the market id")
    if hash160(ed).hex() not in _market_events(md):
        raise ScriptFailure(Failure.VERIFY_FAILED, "event is not part of the market")
    ref = _market_ref(ctx)
    if ref != mh.hex():
        raise ScriptFailure(Failure.VERIFY_FAILED, "spending transaction names a different market")
    stack.append(TRUE)


def op_eventlookup(stack: list, ctx: ExecContext) -> None:
    (eid,) = _pop(stack)
    if len(stack) < 2:
        raise ScriptFailure(Failure.UNDERFLOW, "event lookup needs market data below the event")
    md = _json(stack[-2], "market data")
    if eid.hex() not in _market_events(md):
        raise ScriptFailure(Failure.LOOKUP_MISS, "event not in market")
    target = ctx.meta.get("event")
    if target is not None and target != eid.hex():
        raise ScriptFailure(Failure.LOOKUP_MISS, "transaction targets a different event")
    spent_event = getattr(ctx.spent_output, "event", None)
    if isinstance(spent_event, str) and spent_event != eid.hex():
        raise ScriptFailure(Failure.LOOKUP_MISS, "spent shares belong to a different event")
    if ctx.registry is not None:
        market = ctx.registry.market(hash160(stack[-2]).hex())
        if market is not None and eid.hex() not in market.events:
            raise ScriptFailure(Failure.LOOKUP_MISS, "registered market lacks the event")


def _consideration_units(ctx: ExecContext) -> set[str]:
    own = ctx.spent_output.units
    return {str(o.units) for j, o in enumerate(ctx.spent) if j != ctx.input_index and o.units != own}


def _units_check(expected: str):
    def op(stack: list, ctx: ExecContext) -> None:
        got = _consideration_units(ctx)
        if got != {expected}:
            raise ScriptFailure(Failure.VERIFY_FAILED, f"expected {expected} in exchange, got {sorted(got)}")

    return op


REPORT_FIELDS = ("branch", "cycle", "id", "outcomes", "quorum")
QUORUM_FIELDS = ("matured", "met", "reported", "required")


def report_digest(report: dict) -> str:
    """Hash-160 of a report's fields other than its id; checks field presence."""
    if not isinstance(report, dict) or tuple(sorted(set(report) | {"id"})) != REPORT_FIELDS:
        raise ScriptFailure(Failure.MALFORMED, "report fields are not canonical")
    q = report["quorum"]
    if not isinstance(q, dict) or tuple(sorted(q)) != QUORUM_FIELDS:
        raise ScriptFailure(Failure.MALFORMED, "quorum fields are not canonical")
    body = {k: v for k, v in report.items() if k != "id"}
    return hash160(canonical_bytes(body)).hex()


def op_datacheck(stack: list, ctx: ExecContext) -> None:
    (pubkey,) = _pop(stack)
    report = getattr(ctx.spent_output, "report", None)
    if report is None:
        raise ScriptFailure(Failure.LOOKUP_MISS, "spent output carries no report")
    if report_digest(report) != report.get("id"):
        raise ScriptFailure(Failure.VERIFY_FAILED, "report id does not match its contents")
    if len(stack) < 2:
        raise ScriptFailure(Failure.UNDERFLOW, "report matrix missing")
    rm = _json(stack[-2], "report matrix")
    if address_of(pubkey) not in rm.get("reporters", []):
        raise ScriptFailure(Failure.VERIFY_FAILED, "reporter absent from report matrix")


def _consensus_params(ctx: ExecContext) -> cons.ConsensusParams:
    try:
        return cons.ConsensusParams.from_dict(ctx.meta["params"])
    except (KeyError, TypeError, ValueError) as e:
        raise ScriptFailure(Failure.MALFORMED, "transaction lacks consensus parameters") from e


def _run_consensus(rm_raw: bytes, ctx: ExecContext):
    key = (hash160(rm_raw), canonical_bytes(ctx.meta.get("params")))
    if key not in ctx.cache:
        rm = _json(rm_raw, "report matrix")
        try:
            matrix = cons.ReportMatrix.from_dict(rm)
            ctx.cache[key] = (matrix, cons.run(matrix, _consensus_params(ctx)))
        except AugurError as e:
            ctx.cache[key] = e
    hit = ctx.cache[key]
    if isinstance(hit, Exception):
        raise ScriptFailure(Failure.CONSENSUS, str(hit))
    return hit


def op_consensus(stack: list, ctx: ExecContext) -> None:
    if len(stack) < 2:
        raise ScriptFailure(Failure.UNDERFLOW, "consensus needs the report matrices")
    _, result = _run_consensus(stack[-2], ctx)
    stack.append(canonical_bytes(result.to_dict()))


def _reputation_by_address(ctx: ExecContext) -> dict[str, int]:
    out: dict[str, int] = {}
    for o in ctx.spent:
        if o.units == "reputation":
            out[o.owner] = out.get(o.owner, 0) + o.value
    return out


def op_pcacheck(stack: list, ctx: ExecContext) -> None:
    rm_raw, cm_raw, res = _pop(stack, 3)
    matrix, result = _run_consensus(rm_raw, ctx)
    balances = _reputation_by_address(ctx)
    if balances != dict(zip(matrix.reporters, matrix.weights)):
        raise ScriptFailure(Failure.VERIFY_FAILED, "matrix weights disagree with reputation inputs")
    cm_obj = _json(cm_raw, "centered matrix")
    try:
        supplied = np.array([[float(x) for x in row] for row in cm_obj], dtype=float)
    except (TypeError, ValueError) as e:
        raise ScriptFailure(Failure.MALFORMED, "centered matrix is not numeric") from e
    centered = cons.center(matrix)
    if supplied.shape != centered.values.shape:
        raise ScriptFailure(Failure.VERIFY_FAILED, "centered matrix has the wrong shape")
    if float(np.abs(supplied - centered.values).max(initial=0.0)) > PCA_TOLERANCE:
        raise ScriptFailure(Failure.VERIFY_FAILED, "centered matrix deviates from recomputation")
    if res != canonical_bytes(result.to_dict()) or res != canonical_bytes(ctx.meta.get("consensus")):
        raise ScriptFailure(Failure.VERIFY_FAILED, "declared consensus differs from recomputation")
    sigma = cons.weighted_covariance(supplied, matrix.weights)
    lam, s = cons.decompose(sigma)
    if cons.reconstruction_error(sigma, lam, s) > RECONSTRUCTION_TOLERANCE:
        raise ScriptFailure(Failure.VERIFY_FAILED, "eigendecomposition does not reconstruct")
    product = (supplied @ s) @ s.T
    stack.append(TRUE)
    stack.append(hash160(canonical_bytes(cons.centered_to_json(product))))
    stack.append(hash160(canonical_bytes(cm_obj)))


def op_dup(stack: list, ctx: ExecContext) -> None:
    (x,) = _pop(stack)
    stack += [x, x]


def op_hash160(stack: list, ctx: ExecContext) -> None:
    (x,) = _pop(stack)
    stack.append(hash160(x))


def op_equalverify(stack: list, ctx: ExecContext) -> None:
    a, b = _pop(stack, 2)
    if a != b:
        raise ScriptFailure(Failure.VERIFY_FAILED, "OP_EQUALVERIFY mismatch")


DISPATCH = {
    Op.OP_DUP: op_dup,
    Op.OP_HASH160: op_hash160,
    Op.OP_EQUALVERIFY: op_equalverify,
    Op.OP_CHECKSIG: op_checksig,
    Op.OP_MARKETCHECK: op_marketcheck,
    Op.OP_EVENTLOOKUP: op_eventlookup,
    Op.OP_ISBITCOIN: _units_check("bitcoin"),
    Op.OP_ISSHARES: _units_check("shares"),
    Op.OP_DATACHECK: op_datacheck,
    Op.OP_CONSENSUS: op_consensus,
    Op.OP_PCACHECK: op_pcacheck,
}


def _run(items: Iterable, stack: list, ctx: ExecContext) -> None:
    for item in items:
        if isinstance(item, bytes):
            if len(item) > ctx.limits.max_item:
                raise ScriptFailure(Failure.LIMIT, "push exceeds item size limit")
            stack.append(item)
        else:
            fn = DISPATCH.get(item) if isinstance(item, Op) else None
            if fn is None:
                raise ScriptFailure(Failure.UNKNOWN_OPCODE, repr(item))
            fn(stack, ctx)
        if len(stack) > ctx.limits.max_stack:
            raise ScriptFailure(Failure.LIMIT, "stack depth limit")


def evaluate(unlock: Script, lock: Script, ctx: ExecContext) -> Failure | None:
    """Run ``unlock`` then ``lock``; return ``None`` on success or the failure reason."""
    stack: list[bytes] = []
    try:
        _run(unlock.items, stack, ctx)
        _run(lock.items, stack, ctx)
    except ScriptFailure as e:
        return e.reason
    if len(stack) != 1 or not is_true(stack[-1]):
        return Failure.FALSE_RESULT
    return None


def execute(unlock: Script, lock: Script, ctx: ExecContext) -> bool:
    return evaluate(unlock, lock, ctx) is None


# Standard script templates

def p2pkh(h160: bytes) -> Script:
    return Script.of(Op.OP_DUP, Op.OP_HASH160, h160, Op.OP_EQUALVERIFY, Op.OP_CHECKSIG)


def event_lock(event_id: bytes) -> Script:
    return Script.of(Op.OP_DUP, Op.OP_HASH160, event_id, Op.OP_EQUALVERIFY, Op.OP_MARKETCHECK)


def pool_lock() -> Script:
    return Script.of(Op.OP_DUP, Op.OP_HASH160, Op.OP_EVENTLOOKUP, Op.OP_ISSHARES, Op.OP_MARKETCHECK)


def share_lock() -> Script:
    return Script.of(Op.OP_DUP, Op.OP_HASH160, Op.OP_EVENTLOOKUP, Op.OP_ISBITCOIN, Op.OP_MARKETCHECK)


def report_lock(h160: bytes) -> Script:
    return Script.of(
        Op.OP_DUP, Op.OP_HASH160, h160, Op.OP_EQUALVERIFY,
        Op.OP_DATACHECK, Op.OP_CONSENSUS, Op.OP_PCACHECK, Op.OP_EQUALVERIFY,
    )


def is_p2pkh(script: Script) -> bool:
    it = script.items
    return (len(it) == 5 and it[:2] == (Op.OP_DUP, Op.OP_HASH160) and isinstance(it[2], bytes)
            and len(it[2]) == 20 and it[3:] == (Op.OP_EQUALVERIFY, Op.OP_CHECKSIG))


def is_report_lock(script: Script) -> bool:
    it = script.items
    return len(it) == 8 and isinstance(it[2], bytes) and script == report_lock(it[2])


def owner_hash(script: Script) -> bytes | None:
    """Key hash that controls a pay-to-hash or report output."""
    if is_p2pkh(script) or is_report_lock(script):
        return script.items[2]
    return None


def market_unlock(market_id: bytes, market_data: bytes, event_data: bytes) -> Script:
    return Script.of(market_id, market_data, event_data)


def report_unlock(matrix: bytes, centered: bytes, pubkey: bytes) -> Script:
    return Script.of(matrix, centered, pubkey)


def centered_bytes(values: np.ndarray) -> bytes:
    return canonical_bytes(cons.centered_to_json(values))

