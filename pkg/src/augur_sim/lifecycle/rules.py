"""Validation and state transitions for each protocol transaction type."""
from __future__ import annotations

from .. import script as sc
from ..amounts import to_fixed
from ..canonical import canonical_bytes, dumps, loads
from ..crypto import decode_address
from ..errors import ValidationError
from ..ledger import FaucetRule, State, Transaction, TransferRule, TxOut, TxRule, Units
from . import builders as bld
from . import settlement
from .model import Event, Market, ReportRecord, Registry


def _fail(msg: str, code: str = "malformed"):
    raise ValidationError(msg, code=code)


def _same_outputs(actual: list[TxOut], expected: list[TxOut], what: str) -> None:
    a = [o.to_dict(i) for i, o in enumerate(actual)]
    e = [o.to_dict(i) for i, o in enumerate(expected)]
    if canonical_bytes(a) != canonical_bytes(e):
        _fail(f"{what} outputs do not match the protocol layout", "bad-outputs")


def _owner(spent: list[TxOut], units: Units) -> str:
    owners = {o.owner for o in spent}
    if len(owners) != 1 or not all(sc.is_p2pkh(o.script) and o.units == units for o in spent):
        _fail(f"inputs must be {units} from a single key")
    return owners.pop()


def _reg(state: State) -> Registry:
    return bld.registry(state)


class CreateEventRule(TxRule):
    def check(self, state, tx, spent):
        reg = _reg(state)
        if tx.meta:
            _fail("CreateEvent carries no top-level fields")
        creator = _owner(spent, Units.BITCOIN)
        head = tx.vout[0]
        if set(head.fields) != {"event", "address"} or head.units != Units.BITCOIN:
            _fail("event output must carry exactly the event and its address")
        ev = Event.from_data(head.fields["event"])
        if head.fields["event"].get("id") != ev.id:
            _fail("event id missing")
        if ev.creator != creator:
            _fail("event creator must pay the fee")
        if head.value < reg.config.min_event_fee:
            _fail("event fee below the minimum", "insufficient-fee")
        if ev.expiration <= state.time:
            _fail("event expiration is not in the future", "past-expiration")
        if (ev.creator, ev.description, ev.expiration) in reg.event_keys:
            _fail("this creator already made this event", "duplicate-event")
        change = sum(o.value for o in spent) - head.value
        expected = [TxOut(head.value, Units.BITCOIN, sc.event_lock(bytes.fromhex(ev.id)),
                          {"event": ev.payload(), "address": ev.address})]
        if change:
            expected.append(TxOut(change, Units.BITCOIN, bld.pay_to(creator)))
        _same_outputs(tx.vout, expected, "CreateEvent")

    def apply(self, state, tx):
        reg = _reg(state)
        ev = Event.from_data(tx.vout[0].fields["event"])
        reg.events[ev.id] = ev
        reg.event_keys.add((ev.creator, ev.description, ev.expiration))
        reg.event_fees[ev.id] = tx.vout[0].value


def _market_from(tx: Transaction, spent: list[TxOut]) -> tuple[Market, bytes]:
    pushes = set()
    for inp, o in zip(tx.vin, spent):
        if isinstance(o.event, dict):
            items = inp.script_sig.items
            if len(items) != 3 or not all(isinstance(x, bytes) for x in items):
                _fail("event inputs push market hash, market data and event data")
            pushes.add(items[1])
    if len(pushes) != 1:
        _fail("event inputs must push one market")
    md = pushes.pop()
    try:
        obj = loads(md)
    except ValueError:
        _fail("market data is not JSON")
    if canonical_bytes(obj) != md:
        _fail("market data is not canonical")
    return Market.from_data(obj), md


class CreateMarketRule(TxRule):
    def check(self, state, tx, spent):
        reg = _reg(state)
        if set(tx.meta) != {"loss_limit", "id", "creator"}:
            _fail("CreateMarket needs loss_limit, id and creator")
        m, md = _market_from(tx, spent)
        if tx.meta["id"] != m.id:
            _fail("market id does not hash the market data")
        if tx.meta["creator"] != m.creator or str(tx.meta["loss_limit"]) != str(m.loss_limit):
            _fail("top-level market fields disagree with the market data")
        n_fund = next((i for i, o in enumerate(spent) if isinstance(o.event, dict)), len(spent))
        funders = spent[:n_fund]
        if not funders or _owner(funders, Units.BITCOIN) != m.creator:
            _fail("the market creator must fund the market")
        event_ins = [o.event.get("id") if isinstance(o.event, dict) else None for o in spent[n_fund:]]
        if event_ins != m.events:
            _fail("one event input per market event, in market order")
        for i, inp in enumerate(tx.vin):
            want = {"tradingFee": m.trading_fee} if i == 0 else {}
            if dumps(inp.extra) != dumps(want):
                _fail("tradingFee belongs on the first input only")
        for e in m.events:
            if e not in reg.events:
                _fail(f"unknown event {e}", "unknown-event")
            if e in reg.event_market:
                _fail(f"event {e} already belongs to a market", "event-consumed")
            if reg.events[e].branch != m.branch:
                _fail("all events of a market share its branch")
        scalar = any(reg.events[e].kind == "scalar" for e in m.events)
        if scalar != (m.bins is not None):
            _fail("bins are given exactly when the market has a scalar event")
        b = reg.branches.get(m.branch)
        if b is not None and b.met:
            _fail("branch is closed for reporting", "branch-closed")
        m.layout(reg)
        if m.funding != bld.funding_for(m):
            _fail("funding must equal the maximum loss", "wrong-funding")
        change = sum(o.value for o in funders) - m.funding
        _same_outputs(tx.vout, bld.market_outputs(m, reg, change), "CreateMarket")

    def apply(self, state, tx):
        reg = _reg(state)
        spent_md = next(i.script_sig.items[1] for i in tx.vin if len(i.script_sig.items) == 3)
        m = Market.from_data(loads(spent_md))
        m.layout(reg)
        m.history.append([state.height + 1, m.prices()])
        reg.markets[m.id] = m
        for e in m.events:
            reg.event_market[e] = m.id


class TradeRule(TxRule):
    side = "Buy"

    def _common(self, state: State, tx: Transaction):
        reg = _reg(state)
        if set(tx.meta) != {"market", "event", "outcome", "shares", "price", "total"}:
            _fail(f"{self.side} needs market, event, outcome, shares, price and total")
        try:
            m, ev = bld._market_event(reg, tx.meta["market"], tx.meta["event"])
        except TypeError:
            _fail("market and event are ids")
        if m.state != "forecasting":
            _fail("market is closed", "market-closed")
        tag = tx.meta["outcome"]
        m.index(ev, tag)
        try:
            shares = to_fixed(tx.meta["shares"])
            total = to_fixed(tx.meta["total"])
        except (TypeError, ValueError, ArithmeticError):
            _fail("shares and total are amounts")
        if shares <= 0:
            _fail("trade of zero shares", "no-op")
        if str(tx.meta["price"]) != str(bld.trade_meta(m, ev, tag, shares, total)["price"]):
            _fail("price must be total / shares")
        quoted = bld.quote(m, ev, tag, shares if self.side == "Buy" else -shares)
        slip = reg.config.slippage
        if self.side == "Buy":
            ok = quoted <= total <= quoted + int(quoted * slip)
        else:
            quoted = -quoted
            ok = quoted - int(quoted * slip) <= total <= quoted
        if not ok:
            _fail(f"execution {quoted} is outside the slippage bound of {total}", "stale-quote")
        return m, ev, tag, shares, total

    def apply(self, state, tx):
        reg = _reg(state)
        m = reg.markets[tx.meta["market"]]
        ev = reg.events[tx.meta["event"]]
        x = to_fixed(tx.meta["shares"])
        m.q[m.index(ev, tx.meta["outcome"])] += x if self.side == "Buy" else -x
        m.history.append([state.height + 1, m.prices()])


class BuyRule(TradeRule):
    side = "Buy"

    def check(self, state, tx, spent):
        m, ev, tag, shares, total = self._common(state, tx)
        user = [o for o in spent if sc.is_p2pkh(o.script)]
        pool = [o for o in spent if not sc.is_p2pkh(o.script)]
        buyer = _owner(user, Units.BITCOIN) if user else _fail("buyer pays in bitcoin")
        accept = bld.market_shares(m, ev.id)
        if not pool or not all(accept(o) for o in pool):
            _fail("share inputs must come from the market's unsold shares")
        if spent != user + pool:
            _fail("buyer inputs precede market inputs")
        expected = bld.buy_outputs(m, ev, buyer, tag, shares, total,
                                   sum(o.value for o in user), sum(o.value for o in pool))
        _same_outputs(tx.vout, expected, "Buy")


class SellRule(TradeRule):
    side = "Sell"

    def check(self, state, tx, spent):
        m, ev, tag, shares, total = self._common(state, tx)
        user = [o for o in spent if sc.is_p2pkh(o.script)]
        pool = [o for o in spent if not sc.is_p2pkh(o.script)]
        seller = _owner(user, Units.SHARES) if user else _fail("seller pays in shares")
        if not all(o.event == ev.id and dumps(o.outcome) == dumps(tag) for o in user):
            _fail("sold shares must match the event and outcome")
        accept = bld.market_bitcoin(m)
        if not pool or not all(accept(o) for o in pool):
            _fail("bitcoin inputs must come from the market")
        if spent != user + pool:
            _fail("seller inputs precede market inputs")
        expected = bld.sell_outputs(m, ev, seller, tag, shares, total,
                                    sum(o.value for o in user), sum(o.value for o in pool))
        _same_outputs(tx.vout, expected, "Sell")


class ReportRule(TxRule):
    def check(self, state, tx, spent):
        reg = _reg(state)
        if tx.meta:
            _fail("Report carries no top-level fields")
        reporter = _owner(spent, Units.REPUTATION)
        if len(tx.vout) != 1 or set(tx.vout[0].fields) != {"report"}:
            _fail("a report has exactly one output carrying the report")
        report = tx.vout[0].report
        try:
            digest = sc.report_digest(report)
        except sc.ScriptFailure as e:
            _fail(str(e))
        if digest != report.get("id"):
            _fail("report id does not hash its fields")
        branch = report["branch"]
        if not isinstance(branch, str):
            _fail("branch is a name")
        ballot = reg.ballot(branch)
        if not ballot:
            _fail(f"branch {branch!r} has nothing to report on", "no-ballot")
        b = reg.peek(branch)
        if report["cycle"] != b.cycle:
            _fail("report names the wrong reporting cycle")
        outcomes = report["outcomes"]
        if not isinstance(outcomes, dict) or set(outcomes) != set(ballot):
            _fail("a report commits to every ballot event", "unknown-event")
        if not all(isinstance(c, str) and len(c) == 40 for c in outcomes.values()):
            _fail("commitments are hash-160 hex digests")
        if report["quorum"] != reg.quorum(branch, state.time):
            _fail("quorum field does not match the branch status")
        if reporter in b.reports:
            _fail("reporter already reported this cycle", "already-reported")
        expected = [TxOut(sum(o.value for o in spent), Units.REPUTATION,
                          sc.report_lock(decode_address(reporter)[0]), {"report": report})]
        _same_outputs(tx.vout, expected, "Report")

    def apply(self, state, tx):
        reg = _reg(state)
        report = tx.vout[0].report
        b = reg.branch(report["branch"])
        reporter = tx.vout[0].owner
        matured = reg.quorum(b.name, state.time)["matured"]
        pub = tx.vin[0].script_sig.items[1].hex()
        b.reports[reporter] = ReportRecord(tx.txid, tx.vout[0].value, report, pub, premature=not matured)


class RedemptionRule(TxRule):
    def skip_script(self, state, tx, index, spent):
        # only report outputs carry a consensus script; everything else is settled by protocol
        return "revote" in tx.meta or not sc.is_report_lock(spent.script)

    def check(self, state, tx, spent):
        reg = _reg(state)
        branch = tx.meta.get("branch")
        if not isinstance(branch, str) or branch not in reg.branches and "feeds" not in tx.meta:
            _fail("redemption names no known branch")
        if "feeds" not in tx.meta and not reg.redemption_due(branch, state.height + 1):
            _fail("reveal window has not elapsed", "redemption-early")
        expected = settlement.rebuild(state, tx)
        if expected is None:
            _fail("feeds do not resolve this branch", "vote-required")
        if canonical_bytes(expected.to_dict()) != canonical_bytes(tx.to_dict()):
            _fail("redemption differs from the protocol's settlement", "bad-redemption")

    def apply(self, state, tx):
        reg = _reg(state)
        b = reg.branch(tx.meta["branch"])
        b.history.append({"cycle": b.cycle, "txid": tx.txid, "revote": tx.meta.get("revote")})
        if "revote" not in tx.meta:
            for mid in tx.meta["markets"]:
                reg.markets[mid].state = "redeemed"
        b.cycle += 1
        b.reports = {}
        b.met = False
        b.met_height = None
        b.challenged = set()


class LifecycleTransferRule(TransferRule):
    """Plain transfers, plus challenges that pay into a branch's reporter escrow."""

    def check(self, state, tx, spent):
        if "challenge" not in tx.meta:
            if tx.meta:
                _fail("transfers carry no top-level fields")
            return super().check(state, tx, spent)
        reg = _reg(state)
        c = tx.meta["challenge"]
        if set(tx.meta) != {"challenge"} or not isinstance(c, dict) or set(c) != {"branch", "event"}:
            _fail("challenge names a branch and an event")
        ev = reg.events.get(c["event"]) if isinstance(c["event"], str) else None
        if ev is None or ev.branch != c["branch"]:
            _fail("challenge names an unknown event", "unknown-event")
        mid = reg.event_market.get(ev.id)
        if mid is None or reg.markets[mid].state == "redeemed":
            _fail("event is not awaiting resolution", "already-redeemed")
        payer = _owner(spent, Units.BITCOIN)
        fee = tx.vout[0].value
        if fee < reg.config.challenge_fee:
            _fail("challenge fee too small", "insufficient-fee")
        expected = [bld.escrow_output(fee, ev.branch)]
        change = sum(o.value for o in spent) - fee
        if change:
            expected.append(TxOut(change, Units.BITCOIN, bld.pay_to(payer)))
        _same_outputs(tx.vout, expected, "challenge")

    def apply(self, state, tx):
        if "challenge" in tx.meta:
            _reg(state).branch(tx.meta["challenge"]["branch"]).challenged.add(tx.meta["challenge"]["event"])


def lifecycle_rules() -> dict[str, TxRule]:
    return {
        "Faucet": FaucetRule(),
        "Transfer": LifecycleTransferRule(),
        "CreateEvent": CreateEventRule(),
        "CreateMarket": CreateMarketRule(),
        "Buy": BuyRule(),
        "Sell": SellRule(),
        "Report": ReportRule(),
        "Redemption": RedemptionRule(),
    }


def end_block(state: State) -> None:
    if isinstance(state.domain, Registry):
        state.domain.on_block(state.height, state.time)
