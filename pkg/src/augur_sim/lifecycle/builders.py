"""Construct and sign the user-initiated protocol transactions.

Builders read the current ledger state (coin selection, registry lookups) but
never modify it; the resulting transaction still has to pass validation.
"""
from __future__ import annotations

from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from typing import Any, Callable

from .. import lmsr
from .. import script as sc
from ..amounts import COIN, to_decimal, to_fixed
from ..canonical import canonical_bytes
from ..crypto import KeyPair, decode_address, hash160, sign
from ..errors import ValidationError
from ..ledger import State, Transaction, TxIn, TxOut, Units
from .model import SHARES_PER_EVENT, Event, Market, Registry, escrow_hash, contract_address, num

EMPTY = sc.Script(())


def pay_to(address: str) -> sc.Script:
    h, _ = decode_address(address)
    return sc.p2pkh(h)


def escrow_output(value: int, branch: str) -> TxOut:
    h = escrow_hash(branch)
    return TxOut(value, Units.BITCOIN, sc.event_lock(h), {"address": contract_address(h.hex()), "branch": branch})


def pool_output(value: int, market: Market) -> TxOut:
    return TxOut(value, Units.BITCOIN, sc.pool_lock(), {"address": market.pool_address})


def registry(state: State) -> Registry:
    if not isinstance(state.domain, Registry):
        raise ValidationError("ledger has no lifecycle registry", code="malformed")
    return state.domain


def select(state: State, units: Units, amount: int, accept: Callable[[TxOut], bool]) -> list:
    """Smallest-outpoint-first selection of outputs covering ``amount``."""
    picked, total = [], 0
    for key, out in state.outputs(units):
        if total >= amount and picked:
            break
        if accept(out):
            picked.append((key, out))
            total += out.value
    if total < amount:
        raise ValidationError(f"insufficient {units}: need {amount}, have {total}", code="insufficient-funds")
    return picked


def wallet(state: State, key: KeyPair, units: Units, amount: int, pred=None) -> list:
    addr = key.address
    return select(state, units, amount,
                  lambda o: sc.is_p2pkh(o.script) and o.owner == addr and (pred is None or pred(o)))


def spend(coins: list, script: sc.Script = EMPTY, extra: dict | None = None) -> list[TxIn]:
    return [TxIn(k[0], k[1], o.value, o.units, script, dict(extra or {})) for k, o in coins]


def sign_inputs(tx: Transaction, key: KeyPair, indices) -> Transaction:
    digest = tx.sighash()
    sig = sign(digest, key)
    for i in indices:
        tx.vin[i].script_sig = sc.Script.of(sig, key.public_key)
    return tx


def fee_split(total: int, rate: Decimal) -> tuple[int, int]:
    """Trading fee on a volume, split creator half / pool half."""
    fee = int((Decimal(total) * rate).quantize(Decimal(1), rounding=ROUND_HALF_EVEN))
    return fee // 2, fee - fee // 2


def parse_outcomes(outcomes) -> tuple[bool, tuple]:
    if outcomes is None:
        return True, (0, 1)
    vals = tuple(outcomes)
    if all(isinstance(x, str) for x in vals):
        return False, vals
    return False, tuple(num(x) for x in vals)


def create_event(state: State, key: KeyPair, description: str, branch: str, expiration: int,
                 outcomes=None, fee: int | None = None) -> Transaction:
    reg = registry(state)
    fee = reg.config.min_event_fee if fee is None else fee
    is_binary, valid_range = parse_outcomes(outcomes)
    ev = Event(description, branch, is_binary, valid_range, int(expiration), key.address)
    coins = wallet(state, key, Units.BITCOIN, fee)
    vout = [TxOut(fee, Units.BITCOIN, sc.event_lock(bytes.fromhex(ev.id)), {"event": ev.payload(), "address": ev.address})]
    change = sum(o.value for _, o in coins) - fee
    if change:
        vout.append(TxOut(change, Units.BITCOIN, pay_to(key.address)))
    tx = Transaction("CreateEvent", spend(coins), vout)
    return sign_inputs(tx, key, range(len(coins)))


def market_outputs(m: Market, reg: Registry, change: int) -> list[TxOut]:
    """Funding, one share coinbase per event, fee escrow, pool fee share, change."""
    fees = sum(reg.event_fees[e] for e in m.events)
    to_reporters = int(Fraction(fees) * reg.config.reporter_share)
    out = [pool_output(m.funding, m)]
    for e in m.events:
        out.append(TxOut(SHARES_PER_EVENT, Units.SHARES, sc.share_lock(), {"event": e, "branch": m.branch}))
    out.append(escrow_output(to_reporters, m.branch))
    out.append(pool_output(fees - to_reporters, m))
    if change:
        out.append(TxOut(change, Units.BITCOIN, pay_to(m.creator)))
    return out


def new_market(reg: Registry, title: str, event_ids: list[str], loss_limit, trading_fee, creator: str) -> Market:
    missing = [e for e in event_ids if e not in reg.events]
    if missing:
        raise ValidationError(f"unknown event {missing[0]}", code="unknown-event")
    evs = [reg.events[e] for e in event_ids]
    bins = reg.config.scalar_bins if any(e.kind == "scalar" for e in evs) else None
    m = Market(title, evs[0].branch, list(event_ids), Decimal(str(loss_limit)), Decimal(str(trading_fee)), 0, creator, bins)
    m.layout(reg)
    m.funding = funding_for(m)
    return m


def funding_for(m: Market) -> int:
    return to_fixed(lmsr.max_loss(float(m.loss_limit), m.n_out))


def create_market(state: State, key: KeyPair, title: str, event_ids: list[str], loss_limit,
                  trading_fee) -> Transaction:
    reg = registry(state)
    m = new_market(reg, title, event_ids, loss_limit, trading_fee, key.address)
    outpoints = []
    for e in event_ids:
        hit = [(k, o) for k, o in state.outputs(Units.BITCOIN)
               if isinstance(o.event, dict) and o.event.get("id") == e]
        if not hit:
            raise ValidationError(f"event {e} is already part of a market", code="event-consumed")
        outpoints.append(hit[0])
    coins = wallet(state, key, Units.BITCOIN, m.funding)
    vin = spend(coins)
    vin[0].extra["tradingFee"] = m.trading_fee
    md = m.data_bytes()
    mh = bytes.fromhex(m.id)
    for k, o in outpoints:
        ed = reg.events[o.event["id"]].data_bytes()
        vin += spend([(k, o)], sc.market_unlock(mh, md, ed))
    change = sum(o.value for _, o in coins) - m.funding
    meta = {"loss_limit": m.loss_limit, "id": m.id, "creator": key.address}
    tx = Transaction("CreateMarket", vin, market_outputs(m, reg, change), meta)
    return sign_inputs(tx, key, range(len(coins)))


def _market_event(reg: Registry, market_id: str, event_id: str) -> tuple[Market, Event]:
    m = reg.market(market_id)
    if m is None:
        raise ValidationError(f"unknown market {market_id}", code="unknown-market")
    if event_id not in m.events:
        raise ValidationError(f"event {event_id} is not in market {market_id}", code="unknown-event")
    return m, reg.events[event_id]


def _unlock(m: Market, reg: Registry, event_id: str) -> sc.Script:
    return sc.market_unlock(bytes.fromhex(m.id), m.data_bytes(), reg.events[event_id].data_bytes())


def market_shares(m: Market, eid: str) -> Callable[[TxOut], bool]:
    locks = (sc.share_lock(), sc.event_lock(bytes.fromhex(eid)))
    return lambda o: o.units == Units.SHARES and o.event == eid and o.outcome is None and o.script in locks


def market_bitcoin(m: Market) -> Callable[[TxOut], bool]:
    event_locks = {sc.event_lock(bytes.fromhex(e)): e for e in m.events}

    def accept(o: TxOut) -> bool:
        if o.units != Units.BITCOIN:
            return False
        if o.script == sc.pool_lock():
            return o.address == m.pool_address
        e = event_locks.get(o.script)
        return e is not None and o.address == contract_address(e)

    return accept


def quote(m: Market, ev: Event, tag, shares: int) -> int:
    """Signed bitcoin amount for a trade, rounded in the pool's favor."""
    try:
        c = lmsr.trade_cost(m.lmsr_state(), m.index(ev, tag), shares / COIN)
    except lmsr.LmsrError as e:
        raise ValidationError(str(e), code="oversell") from e
    return to_fixed(c, "ceil") if shares > 0 else -to_fixed(-c, "floor")


def trade_meta(m: Market, ev: Event, tag, shares: int, total: int) -> dict:
    return {
        "market": m.id,
        "event": ev.id,
        "outcome": tag,
        "shares": to_decimal(shares),
        "price": to_decimal(to_fixed(Fraction(total, shares))),
        "total": to_decimal(total),
    }


def buy(state: State, key: KeyPair, market_id: str, event_id: str, outcome, shares: int) -> Transaction:
    reg = registry(state)
    m, ev = _market_event(reg, market_id, event_id)
    if shares <= 0:
        raise ValidationError("buy amount must be positive", code="no-op")
    if m.state != "forecasting":
        raise ValidationError("market is closed", code="market-closed")
    cost = quote(m, ev, outcome, shares)
    cf, pf = fee_split(cost, m.trading_fee)
    coins = wallet(state, key, Units.BITCOIN, cost + cf + pf)
    pool_shares = select(state, Units.SHARES, shares, market_shares(m, event_id))
    vin = spend(coins) + [spend([c], _unlock(m, reg, event_id))[0] for c in pool_shares]
    vout = buy_outputs(m, ev, key.address, outcome, shares, cost,
                       sum(o.value for _, o in coins), sum(o.value for _, o in pool_shares))
    tx = Transaction("Buy", vin, vout, trade_meta(m, ev, outcome, shares, cost))
    return sign_inputs(tx, key, range(len(coins)))


def buy_outputs(m: Market, ev: Event, buyer: str, tag, shares: int, cost: int, btc_in: int, shares_in: int) -> list[TxOut]:
    cf, pf = fee_split(cost, m.trading_fee)
    out = [
        TxOut(cost, Units.BITCOIN, sc.event_lock(bytes.fromhex(ev.id)), {"address": ev.address}),
        TxOut(shares, Units.SHARES, pay_to(buyer), {"event": ev.id, "outcome": tag}),
        TxOut(cf, Units.BITCOIN, pay_to(m.creator)),
        pool_output(pf, m),
    ]
    if shares_in > shares:
        out.append(TxOut(shares_in - shares, Units.SHARES, sc.share_lock(), {"event": ev.id, "branch": m.branch}))
    if btc_in > cost + cf + pf:
        out.append(TxOut(btc_in - cost - cf - pf, Units.BITCOIN, pay_to(buyer)))
    return out


def sell(state: State, key: KeyPair, market_id: str, event_id: str, outcome, shares: int) -> Transaction:
    reg = registry(state)
    m, ev = _market_event(reg, market_id, event_id)
    if shares <= 0:
        raise ValidationError("sell amount must be positive", code="no-op")
    if m.state != "forecasting":
        raise ValidationError("market is closed", code="market-closed")
    m.index(ev, outcome)
    held = wallet(state, key, Units.SHARES, shares, lambda o: o.event == event_id and o.outcome == outcome
                  and type(o.outcome) is type(outcome))
    proceeds = -quote(m, ev, outcome, -shares)
    pool = select(state, Units.BITCOIN, proceeds, market_bitcoin(m))
    vin = spend(held)
    for k, o in pool:
        target = event_id if o.script == sc.pool_lock() else next(e for e in m.events if o.address == contract_address(e))
        vin += spend([(k, o)], _unlock(m, reg, target))
    vout = sell_outputs(m, ev, key.address, outcome, shares, proceeds,
                        sum(o.value for _, o in held), sum(o.value for _, o in pool))
    tx = Transaction("Sell", vin, vout, trade_meta(m, ev, outcome, shares, proceeds))
    return sign_inputs(tx, key, range(len(held)))


def sell_outputs(m: Market, ev: Event, seller: str, tag, shares: int, proceeds: int, shares_in: int,
                 btc_in: int) -> list[TxOut]:
    cf, pf = fee_split(proceeds, m.trading_fee)
    out = [
        TxOut(shares, Units.SHARES, sc.event_lock(bytes.fromhex(ev.id)), {"address": ev.address, "event": ev.id}),
        TxOut(proceeds - cf - pf, Units.BITCOIN, pay_to(seller)),
        TxOut(cf, Units.BITCOIN, pay_to(m.creator)),
        pool_output(pf, m),
    ]
    if shares_in > shares:
        out.append(TxOut(shares_in - shares, Units.SHARES, pay_to(seller), {"event": ev.id, "outcome": tag}))
    if btc_in > proceeds:
        out.append(pool_output(btc_in - proceeds, m))
    return out


def transfer(state: State, key: KeyPair, to: str, units: Units, amount: int, event: str | None = None,
             outcome: Any = None) -> Transaction:
    if amount <= 0:
        raise ValidationError("transfer amount must be positive", code="no-op")
    pred = None
    fields: dict = {}
    if units == Units.SHARES:
        pred = lambda o: o.event == event and o.outcome == outcome and type(o.outcome) is type(outcome)  # noqa: E731
        fields = {"event": event, "outcome": outcome}
    coins = wallet(state, key, units, amount, pred)
    vout = [TxOut(amount, units, pay_to(to), dict(fields))]
    change = sum(o.value for _, o in coins) - amount
    if change:
        vout.append(TxOut(change, units, pay_to(key.address), dict(fields)))
    return sign_inputs(Transaction("Transfer", spend(coins), vout), key, range(len(coins)))


def faucet(allocations: list[tuple[str, Units, int]]) -> Transaction:
    return Transaction("Faucet", [], [TxOut(v, u, pay_to(a)) for a, u, v in allocations])


def challenge(state: State, key: KeyPair, event_id: str, fee: int | None = None) -> Transaction:
    reg = registry(state)
    if event_id not in reg.events:
        raise ValidationError(f"unknown event {event_id}", code="unknown-event")
    fee = reg.config.challenge_fee if fee is None else fee
    branch = reg.events[event_id].branch
    coins = wallet(state, key, Units.BITCOIN, fee)
    vout = [escrow_output(fee, branch)]
    change = sum(o.value for _, o in coins) - fee
    if change:
        vout.append(TxOut(change, Units.BITCOIN, pay_to(key.address)))
    meta = {"challenge": {"branch": branch, "event": event_id}}
    return sign_inputs(Transaction("Transfer", spend(coins), vout, meta), key, range(len(coins)))


# Reports

def commit_value(v) -> Any:
    if v is None or v == "INVALID":
        return v
    return num(v)


def commitment(branch: str, cycle: int, event: str, reporter: str, salt: str, value) -> str:
    body = {"branch": branch, "cycle": cycle, "event": event, "reporter": reporter, "salt": salt, "value": value}
    return hash160(canonical_bytes(body)).hex()


def submit_report(state: State, key: KeyPair, branch: str, entries: dict, salt: Callable[[str], str]) -> tuple[Transaction, dict]:
    """Report transaction plus the reveal message that later discloses it.

    ``entries`` maps event id to an outcome, ``"INVALID"`` or ``None``;
    ballot events left out are NO REPORT.  ``salt(event_id)`` supplies the
    per-entry commitment salt.
    """
    reg = registry(state)
    ballot = reg.ballot(branch)
    if not ballot:
        raise ValidationError(f"branch {branch!r} has nothing to report on", code="no-ballot")
    unknown = set(entries) - set(ballot)
    if unknown:
        raise ValidationError(f"event {sorted(unknown)[0]} is not on the ballot", code="unknown-event")
    b = reg.peek(branch)
    values = {e: commit_value(entries.get(e)) for e in ballot}
    for e, v in values.items():
        reg.events[e].normalize(v)
    salts = {e: salt(e) for e in ballot}
    report = {
        "branch": branch,
        "cycle": b.cycle,
        "outcomes": {e: commitment(branch, b.cycle, e, key.address, salts[e], values[e]) for e in ballot},
        "quorum": reg.quorum(branch, state.time),
    }
    report["id"] = sc.report_digest(report)
    coins = [(k, o) for k, o in state.outputs(Units.REPUTATION) if sc.is_p2pkh(o.script) and o.owner == key.address]
    if not coins:
        raise ValidationError(f"{key.address} holds no reputation", code="no-reputation")
    total = sum(o.value for _, o in coins)
    vout = [TxOut(total, Units.REPUTATION, sc.report_lock(key.hash160), {"report": report})]
    tx = sign_inputs(Transaction("Report", spend(coins), vout), key, range(len(coins)))
    reveal = {"reporter": key.address, "branch": branch, "cycle": b.cycle, "entries": values, "salts": salts}
    return tx, reveal
