from decimal import Decimal

import pytest

from augur_sim import lmsr
from augur_sim import script as sc
from augur_sim.amounts import COIN, to_fixed
from augur_sim.errors import ValidationError
from augur_sim.ledger import Units
from augur_sim.lifecycle import builders as bld
from augur_sim.lifecycle import settlement
from augur_sim.lifecycle.model import LifecycleConfig

BRANCH = "politics"
BLOCK = 600


def salt_for(who):
    return lambda e: f"{who}-{e}"


def event(chain, who="joe", blocks=3, desc="Clinton wins", outcomes=None, fee=None):
    exp = chain.state.time + blocks * BLOCK
    tx = bld.create_event(chain.state, chain.keys[who], desc, BRANCH, exp, outcomes, fee)
    chain.mine(tx)
    return tx.vout[0].event["id"]


def market(chain, events, who="joe", loss_limit=40, fee="0.005"):
    tx = bld.create_market(chain.state, chain.keys[who], "m", events, loss_limit, Decimal(fee))
    chain.mine(tx)
    return tx.meta["id"]


def advance(chain, n):
    for _ in range(n):
        chain.mine()


def report(chain, who, entries):
    tx, reveal = bld.submit_report(chain.state, chain.keys[who], BRANCH, entries, salt_for(who))
    chain.mine(tx)
    return tx, reveal


def settle(chain, reveals):
    while not chain.reg.redemption_due(BRANCH, chain.state.height + 1):
        chain.mine()
    tx = settlement.build_redemption(chain.state, BRANCH, reveals)
    chain.mine(tx)
    return tx


def rejection(chain, tx):
    report = chain.ledger.validate(tx)
    assert not report
    return report.code


def test_event_expiring_now_is_rejected(chain):
    tx = bld.create_event(chain.state, chain.keys["joe"], "x", BRANCH, chain.state.time)
    assert rejection(chain, tx) == "past-expiration"
    ok = bld.create_event(chain.state, chain.keys["joe"], "x", BRANCH, chain.state.time + 1)
    assert chain.ledger.validate(ok)


def test_duplicate_event_only_for_the_same_creator(chain):
    exp = chain.state.time + 5 * BLOCK
    chain.mine(bld.create_event(chain.state, chain.keys["joe"], "x", BRANCH, exp))
    again = bld.create_event(chain.state, chain.keys["joe"], "x", BRANCH, exp)
    assert rejection(chain, again) == "duplicate-event"
    other = bld.create_event(chain.state, chain.keys["paul"], "x", BRANCH, exp)
    assert chain.ledger.validate(other)


def test_event_fee_floor(chain):
    tx = bld.create_event(chain.state, chain.keys["joe"], "x", BRANCH, chain.state.time + BLOCK, fee=to_fixed("0.001"))
    assert rejection(chain, tx) == "insufficient-fee"


def test_single_event_market_funding_is_the_loss_bound(chain):
    e = event(chain)
    before = chain.state.balance(chain.addr("joe"), Units.BITCOIN)
    mid = market(chain, [e], loss_limit=1)
    m = chain.reg.market(mid)
    assert m.funding == 69314718
    assert before - chain.state.balance(chain.addr("joe"), Units.BITCOIN) == 69314718
    assert m.prices() == [0.5, 0.5]


def test_event_can_back_only_one_market(chain):
    e = event(chain)
    market(chain, [e])
    with pytest.raises(ValidationError) as err:
        bld.create_market(chain.state, chain.keys["paul"], "again", [e], 10, Decimal("0.01"))
    assert err.value.code == "event-consumed"


def test_zero_share_trade_is_a_no_op(chain):
    mid = market(chain, [e := event(chain)])
    with pytest.raises(ValidationError) as err:
        bld.buy(chain.state, chain.keys["paul"], mid, e, True, 0)
    assert err.value.code == "no-op"


def test_sell_after_buy_without_fee_restores_balance(chain):
    e = event(chain)
    mid = market(chain, [e], fee="0")
    start = chain.state.balance(chain.addr("paul"), Units.BITCOIN)
    chain.mine(bld.buy(chain.state, chain.keys["paul"], mid, e, True, 10 * COIN))
    paid = start - chain.state.balance(chain.addr("paul"), Units.BITCOIN)
    assert abs(paid / COIN - lmsr.trade_cost(lmsr.LmsrState.fresh(40, 2), 1, 10)) <= 1e-8
    chain.mine(bld.sell(chain.state, chain.keys["paul"], mid, e, True, 10 * COIN))
    assert abs(chain.state.balance(chain.addr("paul"), Units.BITCOIN) - start) <= 1
    assert chain.reg.market(mid).q == [0, 0]


def test_tampered_trade_price_is_rejected(chain):
    e = event(chain)
    mid = market(chain, [e])
    tx = bld.buy(chain.state, chain.keys["paul"], mid, e, True, 10 * COIN)
    tx.meta["total"] = Decimal(tx.meta["total"]) - 1
    assert not chain.ledger.validate(tx)


def test_report_gathers_all_reputation(chain):
    e = event(chain, blocks=1)
    market(chain, [e])
    tx, _ = report(chain, "jane", {e: 1})
    assert [o.value for o in tx.vout] == [to_fixed(42)]
    assert sc.is_report_lock(tx.vout[0].script)
    assert chain.state.balance(chain.addr("jane"), Units.REPUTATION) == to_fixed(42)


def test_empty_ballot_is_accepted(chain):
    e = event(chain, blocks=1)
    market(chain, [e])
    tx, reveal = report(chain, "bea", {})
    assert reveal["entries"] == {e: None}


def test_premature_report_is_flagged(chain):
    e = event(chain, blocks=20)
    market(chain, [e])
    report(chain, "helga", {e: 1})
    assert chain.reg.branches[BRANCH].reports[chain.addr("helga")].premature
    advance(chain, 20)
    report(chain, "jane", {e: 1})
    b = chain.reg.branches[BRANCH]
    assert not b.reports[chain.addr("jane")].premature
    assert b.met


def test_quorum_closes_markets(chain):
    e = event(chain, blocks=1)
    mid = market(chain, [e])
    report(chain, "helga", {e: 1})
    chain.mine(bld.buy(chain.state, chain.keys["paul"], mid, e, True, COIN))
    report(chain, "jane", {e: 1})
    assert chain.reg.market(mid).state == "closed"
    with pytest.raises(ValidationError) as err:
        bld.buy(chain.state, chain.keys["paul"], mid, e, True, COIN)
    assert err.value.code == "market-closed"


def test_duplicate_report_is_rejected(chain):
    e = event(chain, blocks=1)
    market(chain, [e])
    report(chain, "helga", {e: 1})
    chain.mine(bld.faucet([(chain.addr("helga"), Units.BITCOIN, 1)]))
    with pytest.raises(ValidationError) as err:
        bld.submit_report(chain.state, chain.keys["helga"], BRANCH, {e: 1}, salt_for("helga"))
    assert err.value.code == "no-reputation"


def test_unanimous_binary_pays_one_per_share(chain):
    e = event(chain, blocks=1)
    mid = market(chain, [e])
    chain.mine(bld.buy(chain.state, chain.keys["paul"], mid, e, True, 10 * COIN))
    before = chain.state.balance(chain.addr("paul"), Units.BITCOIN)
    pool = sum(o.value for _, o in chain.state.outputs(Units.BITCOIN) if bld.market_bitcoin(chain.reg.market(mid))(o))
    reveals = [report(chain, w, {e: 1})[1] for w in ("helga", "jane", "bea")]
    tx = settle(chain, reveals)
    assert chain.state.balance(chain.addr("paul"), Units.BITCOIN) - before == 10 * COIN
    residual = chain.state.balance(chain.addr("joe"), Units.BITCOIN)
    assert pool == 10 * COIN + sum(o.value for o in tx.vout if o.owner == chain.addr("joe"))
    assert residual > 0
    assert chain.reg.market(mid).state == "redeemed"
    rep = {r["reporter"]: r["new"] for r in tx.meta["consensus"]["reputation"]}
    assert rep == {chain.addr("helga"): to_fixed(10), chain.addr("jane"): to_fixed(42), chain.addr("bea"): to_fixed(20)}


def test_payouts_plus_residual_equal_pool(chain):
    e = event(chain, blocks=2)
    f = event(chain, blocks=2, desc="Senate flips", outcomes=["D", "R", "split"])
    mid = market(chain, [e, f])
    chain.mine(bld.buy(chain.state, chain.keys["paul"], mid, e, True, 7 * COIN))
    chain.mine(bld.buy(chain.state, chain.keys["joe"], mid, f, 2, 3 * COIN))
    chain.mine(bld.buy(chain.state, chain.keys["helga"], mid, e, False, 2 * COIN))
    advance(chain, 2)
    reveals = [report(chain, "helga", {e: 1, f: 2})[1], report(chain, "jane", {e: 1, f: 1})[1]]
    m = chain.reg.market(mid)
    while not chain.reg.redemption_due(BRANCH, chain.state.height + 1):
        chain.mine()
    tx = settlement.build_redemption(chain.state, BRANCH, reveals)
    resolved = {o["event"]: o["resolved"] for o in tx.meta["consensus"]["outcomes"]}
    _, paid, residual, pool = settlement.settle_market(chain.state, m, resolved)
    assert sum(paid.values()) + residual == pool
    supply = chain.state.supply(Units.BITCOIN)
    chain.mine(tx)
    assert chain.state.supply(Units.BITCOIN) == supply


def test_redemption_must_wait_for_the_reveal_window(chain):
    e = event(chain, blocks=1)
    market(chain, [e])
    reveals = [report(chain, w, {e: 0})[1] for w in ("helga", "jane")]
    tx = settlement.build_redemption(chain.state, BRANCH, reveals)
    assert rejection(chain, tx) == "redemption-early"


def test_redemption_cannot_be_altered(chain):
    e = event(chain, blocks=1)
    mid = market(chain, [e])
    chain.mine(bld.buy(chain.state, chain.keys["paul"], mid, e, True, COIN))
    reveals = [report(chain, w, {e: 1})[1] for w in ("helga", "jane")]
    while not chain.reg.redemption_due(BRANCH, chain.state.height + 1):
        chain.mine()
    tx = settlement.build_redemption(chain.state, BRANCH, reveals)
    assert chain.ledger.validate(tx)
    tx.vout[0], tx.vout[1] = tx.vout[1], tx.vout[0]
    assert not chain.ledger.validate(tx)


def test_bad_reveal_counts_as_no_report(chain):
    e = event(chain, blocks=1)
    market(chain, [e])
    good = report(chain, "helga", {e: 1})[1]
    liar = report(chain, "jane", {e: 1})[1]
    liar["entries"][e] = 0
    assert list(settlement.valid_reveals(chain.reg, chain.reg.branches[BRANCH], [good, liar])) == [chain.addr("helga")]


def test_config_round_trip():
    cfg = LifecycleConfig(quorum_required=4, slippage=__import__("fractions").Fraction(1, 100))
    assert LifecycleConfig.from_dict(cfg.to_dict()) == cfg
