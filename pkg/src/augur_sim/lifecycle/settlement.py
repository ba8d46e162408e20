"""Redemption: consensus over revealed reports, per-share values, payouts.

The block producer builds the Redemption; validators rebuild it from the same
ledger state and the reveals carried in the transaction and require an exact
match, so every payout is a deterministic function of the chain.
"""
from __future__ import annotations

import math
from fractions import Fraction

from .. import consensus as cons
from .. import feeds
from .. import script as sc
from ..amounts import largest_remainder, to_decimal, to_fixed
from ..canonical import canonical_bytes, ftod, loads
from ..errors import ConsensusError, ValidationError
from ..ledger import State, Transaction, TxIn, TxOut, Units
from .builders import EMPTY, commitment, escrow_hash, market_bitcoin, pay_to, registry
from .model import Branch, Event, Market, Registry


def check_reveal(reg: Registry, b: Branch, reveal: dict) -> dict:
    """Normalized entries of a reveal that opens its reporter's commitments."""
    try:
        who = reveal["reporter"]
        record = b.reports[who]
        if reveal["cycle"] != b.cycle or reveal["branch"] != b.name:
            raise KeyError("cycle")
        outcomes = record.report["outcomes"]
        if set(reveal["entries"]) != set(outcomes) or set(reveal["salts"]) != set(outcomes):
            raise KeyError("entries")
        out = {}
        for e, c in outcomes.items():
            v = reveal["entries"][e]
            if commitment(b.name, b.cycle, e, who, reveal["salts"][e], v) != c:
                raise ValueError("commitment")
            out[e] = reg.events[e].normalize(v)
        return out
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise ValidationError(f"reveal does not open a report: {e}", code="bad-reveal") from e


def valid_reveals(reg: Registry, b: Branch, reveals: list[dict]) -> dict[str, tuple[dict, dict]]:
    out = {}
    for r in reveals:
        try:
            entries = check_reveal(reg, b, r)
        except ValidationError:
            continue
        out.setdefault(r["reporter"], (r, entries))
    return out


def _closed(reg: Registry, branch: str) -> list[Market]:
    return [m for m in reg.open_markets(branch) if m.state == "closed"]


def _report_outputs(state: State, branch: str) -> list:
    return [(k, o) for k, o in state.outputs(Units.REPUTATION)
            if sc.is_report_lock(o.script) and isinstance(o.report, dict) and o.report.get("branch") == branch]


def _reputation_inputs(state: State, branch: str) -> list:
    return [(k, o) for k, o in state.outputs(Units.REPUTATION)
            if sc.is_p2pkh(o.script) or (sc.is_report_lock(o.script) and o.report.get("branch") == branch)]


def share_value(m: Market, ev: Event, tag, resolved) -> Fraction:
    """Bitcoin paid per share of ``tag`` once the event resolved to ``resolved``."""
    if resolved == cons.INVALID:
        p = m.event_prices(ev.id, m.close_prices or m.prices())[m.index(ev, tag) - m.offsets[ev.id][0]]
        return Fraction(ftod(p))
    if ev.kind == "scalar":
        x = Fraction(2 * tag + 1, 2 * m.bins)
        return 1 - abs(x - Fraction(ftod(resolved)))
    return Fraction(int(int(tag) == resolved))


def settle_market(state: State, m: Market, resolved: dict) -> tuple[list, dict, int, int]:
    """Inputs consumed, payouts per (owner, event), creator residual and pool balance."""
    reg = registry(state)
    btc = [(k, o) for k, o in state.outputs(Units.BITCOIN) if market_bitcoin(m)(o)]
    shares = [(k, o) for k, o in state.outputs(Units.SHARES) if o.event in m.offsets]
    pool = sum(o.value for _, o in btc)
    owed: dict = {}
    for _, o in shares:
        if o.outcome is None or not sc.is_p2pkh(o.script):
            continue
        ev = reg.events[o.event]
        key = (o.owner, ev.id)
        owed[key] = owed.get(key, Fraction(0)) + o.value * share_value(m, ev, o.outcome, resolved[ev.id])
    keys = sorted(owed)
    total = sum(owed.values(), Fraction(0))
    if total <= pool:
        paid = {k: math.floor(owed[k]) for k in keys}
    else:
        # pool cannot cover every claim: scale all payouts down pro rata
        amounts = largest_remainder([float(owed[k]) for k in keys], pool, keys=[f"{a}:{e}" for a, e in keys])
        paid = dict(zip(keys, amounts))
    residual = pool - sum(paid.values())
    return btc + shares, paid, residual, pool


def _seized(coins: list) -> list[TxIn]:
    return [TxIn(k[0], k[1], o.value, o.units, EMPTY) for k, o in coins]


def _payout_section(state: State, markets: list[Market], resolved: dict, events: list[str]):
    vin: list[TxIn] = []
    payouts: dict = {}
    residuals = []
    for m in markets:
        coins, paid, residual, _ = settle_market(state, m, resolved)
        vin += _seized(coins)
        for k, v in paid.items():
            payouts[k] = payouts.get(k, 0) + v
        residuals.append((m.creator, residual))
    rows = sorted({a for a, _ in payouts})
    matrix = {
        "rows": rows,
        "events": events,
        "entries": [[to_decimal(payouts.get((a, e), 0)) for e in events] for a in rows],
    }
    vout = []
    for a in rows:
        v = sum(payouts.get((a, e), 0) for e in events)
        if v:
            vout.append(TxOut(v, Units.BITCOIN, pay_to(a)))
    for creator, r in residuals:
        if r:
            vout.append(TxOut(r, Units.BITCOIN, pay_to(creator)))
    return vin, vout, matrix


def _round_trip(matrix: cons.ReportMatrix) -> cons.ReportMatrix:
    return cons.ReportMatrix.from_dict(loads(canonical_bytes(matrix.to_dict())))


def build_matrix(state: State, branch: str, reveals: list[dict]):
    reg = registry(state)
    b = reg.branches[branch]
    events = [e for m in _closed(reg, branch) for e in m.events]
    rep = _reputation_inputs(state, branch)
    weights: dict[str, int] = {}
    for _, o in rep:
        weights[o.owner] = weights.get(o.owner, 0) + o.value
    rows = sorted(weights)
    opened = valid_reveals(reg, b, reveals)
    entries = [[opened[a][1].get(e) if a in opened else None for e in events] for a in rows]
    kinds = [reg.events[e].consensus_kind() for e in events]
    matrix = _round_trip(cons.ReportMatrix(rows, events, [weights[a] for a in rows], entries, kinds))
    return matrix, rep, opened


def build_redemption(state: State, branch: str, reveals: list[dict]) -> Transaction:
    """Settle a branch whose reveal window has elapsed; a re-vote if consensus is impossible."""
    reg = registry(state)
    b = reg.branches.get(branch)
    if b is None or not b.met:
        raise ValidationError(f"branch {branch!r} has not reached quorum", code="quorum-not-met")
    params = reg.config.consensus
    markets = _closed(reg, branch)
    events = [e for m in markets for e in m.events]
    try:
        matrix, rep, opened = build_matrix(state, branch, reveals)
        result = cons.run(matrix, params)
    except ConsensusError as e:
        return _revote(state, b, e.code or "consensus-degenerate", reveals)

    rm = canonical_bytes(matrix.to_dict())
    cm = sc.centered_bytes(cons.center(matrix).values)
    vin = []
    for k, o in rep:
        if sc.is_report_lock(o.script):
            pub = bytes.fromhex(b.reports[o.owner].pubkey)
            vin.append(TxIn(k[0], k[1], o.value, o.units, sc.report_unlock(rm, cm, pub)))
        else:
            vin.append(TxIn(k[0], k[1], o.value, o.units, EMPTY))
    vout = [TxOut(v, Units.REPUTATION, pay_to(a)) for a, v in zip(result.reporters, result.new_reputation)]

    resolved = {o.event: o.resolved for o in result.outcomes}
    pin, pout, payout_matrix = _payout_section(state, markets, resolved, events)
    vin += pin
    vout += pout

    # reporter half of the event fees, by new reputation, to reporters with non-empty ballots
    eligible = [a for a in result.reporters
                if a in opened and any(v is not None for v in opened[a][1].values())]
    escrow = [(k, o) for k, o in state.outputs(Units.BITCOIN) if o.script == sc.event_lock(escrow_hash(branch))]
    pot = sum(o.value for _, o in escrow)
    if eligible and pot:
        new = dict(zip(result.reporters, result.new_reputation))
        split = largest_remainder([float(new[a]) for a in eligible], pot, keys=eligible)
        vin += _seized(escrow)
        vout += [TxOut(v, Units.BITCOIN, pay_to(a)) for a, v in zip(eligible, split) if v]

    meta = {
        "branch": branch,
        "cycle": b.cycle,
        "markets": [m.id for m in markets],
        "events": events,
        "reveals": [opened[a][0] for a in sorted(opened)],
        "params": params.to_dict(),
        "consensus": result.to_dict(),
        "payout_matrix": payout_matrix,
    }
    return Transaction("Redemption", vin, vout, meta)


def _revote(state: State, b: Branch, reason: str, reveals: list) -> Transaction:
    coins = _report_outputs(state, b.name)
    vin = _seized(coins)
    vout = [TxOut(o.value, Units.REPUTATION, pay_to(o.owner)) for _, o in coins]
    if not vout:
        raise ValidationError("nothing to return for a re-vote", code="consensus-degenerate")
    reg = registry(state)
    opened = valid_reveals(reg, b, reveals)
    meta = {"branch": b.name, "cycle": b.cycle, "revote": reason, "reveals": [opened[a][0] for a in sorted(opened)]}
    return Transaction("Redemption", vin, vout, meta)


def feed_resolution(state: State, branch: str, observations: list[dict]) -> dict | None:
    """Resolved outcome per ballot event, or ``None`` when a vote is required."""
    reg = registry(state)
    b = reg.branches.get(branch)
    ballot = reg.ballot(branch)
    if not ballot or (b is not None and (b.reports or b.challenged or b.met)):
        return None
    if any(reg.events[e].expiration > state.time for e in ballot):
        return None
    for obs in observations:
        try:
            weight = to_fixed(obs["weight"])
        except (KeyError, TypeError, ValueError, ArithmeticError):
            return None
        if state.balance(obs.get("holder"), Units.REPUTATION) != weight:
            return None
    agg = feeds.aggregate(observations, reg.config.feed_threshold)
    out = {}
    for e in ballot:
        a = agg.get(e)
        if a is None or not a.resolved:
            return None
        try:
            v = reg.events[e].normalize(a.value)
        except ValidationError:
            return None
        out[e] = v
    return out


def build_feed_redemption(state: State, branch: str, observations: list[dict]) -> Transaction | None:
    reg = registry(state)
    values = feed_resolution(state, branch, observations)
    if values is None:
        return None
    markets = reg.open_markets(branch)
    events = [e for m in markets for e in m.events]
    margin = reg.config.consensus.margin
    resolved = {e: cons.resolve(float(values[e]), reg.events[e].consensus_kind(), margin) for e in events}
    vin, vout, payout_matrix = _payout_section(state, markets, resolved, events)
    if not vin:
        return None
    meta = {
        "branch": branch,
        "cycle": reg.peek(branch).cycle,
        "markets": [m.id for m in markets],
        "events": events,
        "feeds": {"threshold": str(reg.config.feed_threshold), "observations": list(observations)},
        "outcomes": {e: ftod(float(values[e])) for e in events},
        "payout_matrix": payout_matrix,
    }
    return Transaction("Redemption", vin, vout, meta)


def rebuild(state: State, tx: Transaction) -> Transaction | None:
    """The Redemption the protocol would produce for ``tx``'s branch and disclosures."""
    branch = tx.meta.get("branch")
    if not isinstance(branch, str):
        return None
    if "feeds" in tx.meta:
        obs = tx.meta["feeds"].get("observations") if isinstance(tx.meta["feeds"], dict) else None
        return build_feed_redemption(state, branch, obs if isinstance(obs, list) else [])
    reveals = tx.meta.get("reveals", [])
    return build_redemption(state, branch, reveals if isinstance(reveals, list) else [])
