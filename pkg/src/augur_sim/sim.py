"""Scenario-driven deterministic simulator.

A scenario is a JSON document with a versioned header, a genesis allocation
and a totally ordered list of actions.  Every ledger-changing action is mined
into its own block; Redemptions whose reveal window has elapsed (and feed
resolutions whose challenge window has elapsed) are prepended to the next
block automatically.  Nothing reads the wall clock or an unseeded RNG, so two
runs of one scenario produce the same block log byte for byte.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from . import feeds
from .amounts import to_decimal, to_fixed
from .canonical import canonical_bytes, dumps, ftod, loads
from .crypto import KeyPair, hash256
from .errors import AugurError, ValidationError
from .ledger import Block, Ledger, LedgerConfig, Units
from .lifecycle import builders as bld
from .lifecycle import make_ledger, settlement
from .lifecycle.model import LifecycleConfig, Registry

log = logging.getLogger(__name__)

SCENARIO_FORMAT = "augur-sim/scenario"
LOG_FORMAT = "augur-sim/blocklog"
VERSION = 1

LEDGER_KEYS = ("block_interval", "genesis_time", "max_tx_size", "max_block_size")
LIFECYCLE_KEYS = ("min_event_fee", "quorum_required", "reveal_window", "scalar_bins", "slippage",
                  "reporter_share", "challenge_fee", "challenge_window", "feed_threshold")
CONSENSUS_KEYS = ("alpha", "margin", "blend_old")


class ScenarioError(AugurError):
    """The scenario document itself is unusable (exit code 2)."""

    code = "bad-scenario"


class ActionFailed(AugurError):
    """An action was rejected; the run stops here (exit code 1)."""

    def __init__(self, index: int, code: str, message: str):
        super().__init__(f"action {index}: {code}: {message}", code)
        self.index = index
        self.reason = message


def split_config(cfg: dict) -> tuple[LedgerConfig, LifecycleConfig]:
    unknown = set(cfg) - set(LEDGER_KEYS) - set(LIFECYCLE_KEYS) - set(CONSENSUS_KEYS)
    if unknown:
        raise ScenarioError(f"unknown config keys: {sorted(unknown)}")
    try:
        lc = LedgerConfig(**{k: int(cfg[k]) for k in LEDGER_KEYS if k in cfg})
        life = {k: cfg[k] for k in LIFECYCLE_KEYS if k in cfg}
        cons = {k: cfg[k] for k in CONSENSUS_KEYS if k in cfg}
        if cons:
            life["consensus"] = cons
        return lc, LifecycleConfig.from_dict(life)
    except (TypeError, ValueError, ArithmeticError) as e:
        raise ScenarioError(f"bad config: {e}") from e


def config_dict(lc: LedgerConfig, life: LifecycleConfig) -> dict:
    d = dict(lc.to_dict())
    ld = life.to_dict()
    d.update({k: ld[k] for k in LIFECYCLE_KEYS})
    d.update(ld["consensus"])
    return d


def chain_ledger(lc: LedgerConfig, life: LifecycleConfig) -> Ledger:
    """Empty ledger whose genesis block commits to the run configuration."""
    ledger = make_ledger(lc, life)
    ledger.state.tip = hash256(canonical_bytes(config_dict(lc, life))).hex()
    return ledger


def load_scenario(source: str | Path | dict) -> dict:
    if isinstance(source, dict):
        doc = source
    else:
        try:
            doc = loads(Path(source).read_bytes())
        except OSError as e:
            raise ScenarioError(f"cannot read scenario: {e}") from e
        except ValueError as e:
            raise ScenarioError(f"scenario is not JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != SCENARIO_FORMAT:
        raise ScenarioError(f"scenario format must be {SCENARIO_FORMAT!r}")
    if doc.get("version") != VERSION:
        raise ScenarioError(f"unsupported scenario version {doc.get('version')!r}")
    for k, t in (("actors", list), ("genesis", dict), ("actions", list)):
        if not isinstance(doc.get(k, t()), t):
            raise ScenarioError(f"{k} must be a {t.__name__}")
    return doc


@dataclass
class RunReport:
    name: str
    seed: str
    height: int
    tip: str
    log_hash: str
    actors: dict
    balances: dict
    markets: dict
    redemptions: list
    feeds: list
    checksums: dict
    expected_failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "height": self.height,
            "tip": self.tip,
            "block_log_hash": self.log_hash,
            "actors": self.actors,
            "balances": self.balances,
            "markets": self.markets,
            "redemptions": self.redemptions,
            "feeds": self.feeds,
            "checksums": self.checksums,
            "expected_failures": self.expected_failures,
        }


def chain_checksums(blocks: list[Block], ledger: Ledger) -> dict:
    """Per-unit supply against net issuance recomputed transaction by transaction."""
    issued = {u.value: 0 for u in Units}
    genesis_rep = 0
    for b in blocks:
        for tx in b.txs:
            for u in Units:
                delta = sum(o.value for o in tx.vout if o.units == u) - sum(i.value for i in tx.vin if i.units == u)
                issued[u.value] += delta
                if u == Units.REPUTATION and b.height == 0:
                    genesis_rep += delta
    supply = {u.value: ledger.state.supply(u) for u in Units}
    return {
        "utxo_hash": ledger.state.utxo_hash(),
        "supply": {k: to_decimal(v) for k, v in supply.items()},
        "issued": {k: to_decimal(v) for k, v in issued.items()},
        "genesis_reputation": to_decimal(genesis_rep),
        "conserved": supply == issued and supply["reputation"] == genesis_rep,
    }


class Simulation:
    def __init__(self, scenario: dict):
        self.doc = load_scenario(scenario)
        self.name = str(self.doc.get("name", ""))
        self.seed = str(self.doc.get("seed", "0"))
        self.ledger_config, self.life_config = split_config(self.doc.get("config", {}))
        self.ledger = chain_ledger(self.ledger_config, self.life_config)
        self.keys: dict[str, KeyPair] = {}
        for name in self.doc.get("actors", []):
            self.key(name)
        self.names: dict[str, str] = {}            # scenario name -> event/market id
        self.secret_reveals: dict = {}             # (actor, branch, cycle) -> reveal
        self.published: dict = {}                  # branch -> {reporter: reveal}
        self.sources: dict[str, feeds.FeedSource] = {}
        self.pending_feeds: dict = {}              # branch -> (due height, observations)
        self.redemptions: list = []
        self.feed_log: list = []
        self.expected_failures: list = []
        self.index = -1
        self._genesis()

    # identities and names
    def key(self, actor: str) -> KeyPair:
        if not isinstance(actor, str) or not actor:
            raise ScenarioError(f"bad actor {actor!r}")
        if actor not in self.keys:
            self.keys[actor] = KeyPair.from_seed(f"{self.seed}:{actor}")
        return self.keys[actor]

    def ref(self, name: str) -> str:
        return self.names.get(name, name)

    def address(self, who: str) -> str:
        return self.keys[who].address if who in self.keys else who

    @property
    def registry(self) -> Registry:
        return bld.registry(self.ledger.state)

    def salt(self, actor: str, branch: str, cycle: int) -> Callable[[str], str]:
        def f(event_id: str) -> str:
            return hashlib.sha256(f"{self.seed}:{actor}:{branch}:{cycle}:{event_id}".encode()).hexdigest()[:32]
        return f

    def _genesis(self) -> None:
        allocations = []
        for actor in sorted(self.doc.get("genesis", {})):
            spec = self.doc["genesis"][actor]
            addr = self.key(actor).address
            for unit in ("bitcoin", "reputation"):
                vals = spec.get(unit, [])
                for v in vals if isinstance(vals, list) else [vals]:
                    if to_fixed(v) > 0:
                        allocations.append((addr, Units(unit), to_fixed(v)))
        txs = [bld.faucet(allocations)] if allocations else []
        block, rejected = self.ledger.produce_block(txs)
        if rejected:
            raise ScenarioError(f"genesis rejected: {rejected[0].error}")

    # block production
    def automatic(self) -> list:
        state = self.ledger.state
        reg = bld.registry(state)
        next_height = state.height + 1
        out = []
        for name in sorted(reg.branches):
            if reg.redemption_due(name, next_height):
                b = reg.branches[name]
                reveals = [r for _, r in sorted(self.published.get(name, {}).items()) if r["cycle"] == b.cycle]
                out.append(settlement.build_redemption(state, name, reveals))
        for name in sorted(self.pending_feeds):
            due, obs = self.pending_feeds[name]
            if next_height < due:
                continue
            del self.pending_feeds[name]
            tx = settlement.build_feed_redemption(state, name, obs)
            if tx is None:
                log.info("feed resolution of %s withdrawn; a vote is required", name)
                continue
            out.append(tx)
        return out

    def mine(self, tx=None) -> Block:
        auto = self.automatic()
        block, rejected = self.ledger.produce_block(auto + ([tx] if tx is not None else []))
        for r in rejected:
            if r.tx is tx:
                raise ActionFailed(self.index, r.error.code, str(r.error))
            raise ActionFailed(self.index, r.error.code, f"automatic {r.tx.type} rejected: {r.error}")
        for t in block.txs:
            if t.type == "Redemption":
                self._record_redemption(block.height, t)
        return block

    def _record_redemption(self, height: int, tx) -> None:
        m = tx.meta
        entry = {"height": height, "txid": tx.txid, "branch": m["branch"], "cycle": m["cycle"]}
        for k in ("revote", "consensus", "outcomes", "payout_matrix"):
            if k in m:
                entry[k] = m[k]
        if "feeds" in m:
            entry["mode"] = "feeds"
        self.redemptions.append(entry)

    # actions
    def run(self) -> RunReport:
        for i, action in enumerate(self.doc.get("actions", [])):
            self.step(action, i)
        return self.report()

    def step(self, action: dict, index: int | None = None) -> Any:
        self.index = len(self.expected_failures) if index is None else index
        if not isinstance(action, dict) or not isinstance(action.get("do"), str):
            raise ScenarioError(f"action {self.index} has no 'do'")
        fn = getattr(self, "do_" + action["do"].replace("-", "_"), None)
        if fn is None:
            raise ScenarioError(f"action {self.index}: unknown action {action['do']!r}")
        expect = action.get("expect")
        try:
            result = fn(action)
        except ActionFailed as e:
            if expect is not None and e.code == expect:
                self.expected_failures.append({"index": self.index, "code": e.code})
                return None
            raise
        except ValidationError as e:
            if expect is not None and e.code == expect:
                self.expected_failures.append({"index": self.index, "code": e.code})
                return None
            raise ActionFailed(self.index, e.code, str(e)) from e
        except (KeyError, TypeError, ValueError, ArithmeticError) as e:
            raise ScenarioError(f"action {self.index} ({action['do']}): {e!r}") from e
        if expect is not None:
            raise ActionFailed(self.index, "unexpected-success", f"expected {expect}")
        return result

    def do_advance(self, a: dict):
        for _ in range(int(a.get("blocks", 1))):
            self.mine()

    def do_create_event(self, a: dict):
        k = self.key(a["actor"])
        if "expiration" in a:
            expiration = int(a["expiration"])
        else:
            n = int(a.get("expires_in_blocks", 1))
            expiration = self.ledger_config.genesis_time + (self.ledger.height + n) * self.ledger_config.block_interval
        fee = to_fixed(a["fee"]) if "fee" in a else None
        tx = bld.create_event(self.ledger.state, k, a["description"], a["branch"], expiration, a.get("outcomes"), fee)
        self.mine(tx)
        eid = tx.vout[0].fields["event"]["id"]
        if "name" in a:
            self.names[a["name"]] = eid
        return tx

    def do_create_market(self, a: dict):
        k = self.key(a["actor"])
        events = [self.ref(e) for e in a["events"]]
        tx = bld.create_market(self.ledger.state, k, a["title"], events, a["loss_limit"], a.get("trading_fee", "0.005"))
        self.mine(tx)
        if "name" in a:
            self.names[a["name"]] = tx.meta["id"]
        return tx

    def _trade(self, a: dict, fn):
        k = self.key(a["actor"])
        tx = fn(self.ledger.state, k, self.ref(a["market"]), self.ref(a["event"]), a["outcome"], to_fixed(a["shares"]))
        self.mine(tx)
        return tx

    def do_buy(self, a: dict):
        return self._trade(a, bld.buy)

    def do_sell(self, a: dict):
        return self._trade(a, bld.sell)

    def do_transfer(self, a: dict):
        k = self.key(a["actor"])
        units = Units(a.get("units", "bitcoin"))
        event = self.ref(a["event"]) if "event" in a else None
        tx = bld.transfer(self.ledger.state, k, self.address(a["to"]), units, to_fixed(a["amount"]), event, a.get("outcome"))
        self.mine(tx)
        return tx

    def do_report(self, a: dict):
        k = self.key(a["actor"])
        branch = a["branch"]
        entries = {self.ref(e): v for e, v in a.get("entries", {}).items()}
        cycle = self.registry.branch(branch).cycle if branch in self.registry.branches else 0
        tx, reveal = bld.submit_report(self.ledger.state, k, branch, entries, self.salt(a["actor"], branch, cycle))
        self.mine(tx)
        self.secret_reveals[(a["actor"], branch, reveal["cycle"])] = reveal
        return tx

    def do_reveal(self, a: dict):
        branch = a["branch"]
        b = self.registry.branches.get(branch)
        if b is None or not b.met:
            raise ValidationError("reveals open once quorum is met", code="quorum-not-met")
        reveal = self.secret_reveals.get((a["actor"], branch, b.cycle))
        if reveal is None:
            raise ValidationError(f"{a['actor']} has no report to reveal", code="no-report")
        settlement.check_reveal(self.registry, b, reveal)
        self.published.setdefault(branch, {})[reveal["reporter"]] = reveal
        return reveal

    def do_feed_source(self, a: dict):
        answers = a.get("answers")
        if answers is not None:
            answers = {self.ref(e): v for e, v in answers.items()}
        self.key(a["actor"])
        self.sources[a["actor"]] = feeds.FeedSource(a.get("id", a["actor"]), feeds.StaticTransport(answers))

    def do_collect_feeds(self, a: dict):
        branch = a["branch"]
        reg = self.registry
        ballot = reg.ballot(branch)
        weights = {self.keys[n].address: self.ledger.balance(self.keys[n].address, Units.REPUTATION)
                   for n in self.sources}
        holders = [(self.keys[n], self.sources[n]) for n in sorted(self.sources)]
        obs = feeds.collect(holders, ballot, weights)
        aggs = feeds.aggregate(obs, reg.config.feed_threshold)
        resolution = settlement.feed_resolution(self.ledger.state, branch, obs)
        entry = {
            "height": self.ledger.height,
            "branch": branch,
            "aggregates": [aggs[e].to_dict() for e in ballot if e in aggs],
            "decision": "resolved" if resolution is not None else "vote-required",
            "observations": obs,
        }
        self.feed_log.append(entry)
        if resolution is not None:
            self.pending_feeds[branch] = (self.ledger.height + 1 + reg.config.challenge_window, obs)
        return entry

    def do_challenge(self, a: dict):
        k = self.key(a["actor"])
        fee = to_fixed(a["fee"]) if "fee" in a else None
        tx = bld.challenge(self.ledger.state, k, self.ref(a["event"]), fee)
        self.mine(tx)
        return tx

    # output
    def log_lines(self) -> list[str]:
        header = {"format": LOG_FORMAT, "version": VERSION, "config": config_dict(self.ledger_config, self.life_config)}
        return [dumps(header)] + self.ledger.log_lines()

    def log_text(self) -> str:
        return "".join(line + "\n" for line in self.log_lines())

    def report(self) -> RunReport:
        state = self.ledger.state
        reg = self.registry
        balances = {
            n: {u.value: to_decimal(state.balance(k.address, u)) for u in Units}
            for n, k in sorted(self.keys.items())
        }
        ids = {v: n for n, v in self.names.items()}
        markets = {}
        for mid, m in reg.markets.items():
            markets[ids.get(mid, mid)] = {
                "id": mid,
                "state": m.state,
                "funding": to_decimal(m.funding),
                "price_history": [[h, [ftod(p) for p in prices]] for h, prices in m.history],
            }
        return RunReport(
            name=self.name,
            seed=self.seed,
            height=state.height,
            tip=state.tip,
            log_hash=hashlib.sha256(self.log_text().encode()).hexdigest(),
            actors={n: k.address for n, k in sorted(self.keys.items())},
            balances=balances,
            markets=markets,
            redemptions=self.redemptions,
            feeds=self.feed_log,
            checksums=chain_checksums(self.ledger.blocks, self.ledger),
            expected_failures=self.expected_failures,
        )

    def save(self, directory: str | Path) -> RunReport:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "blocks.jsonl").write_text(self.log_text())
        self.ledger.save(d / "state")
        (d / "utxo_snapshot.json").write_text((d / "state" / "utxo_snapshot.json").read_text())
        rep = self.report()
        (d / "report.json").write_text(dumps(rep.to_dict(), canonical=False, indent=2) + "\n")
        return rep


def run(scenario: str | Path | dict, out: str | Path | None = None) -> RunReport:
    sim = Simulation(scenario)
    sim.run()
    return sim.save(out) if out is not None else sim.report()


@dataclass
class VerifyResult:
    ok: bool
    height: int | None = None
    txid: str | None = None
    message: str = ""
    checksums: dict | None = None

    def __bool__(self) -> bool:
        return self.ok


def parse_log(text: str) -> tuple[dict, list[Block]]:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValueError("empty block log")
    header = loads(lines[0])
    if not isinstance(header, dict) or header.get("format") != LOG_FORMAT or header.get("version") != VERSION:
        raise ValueError("missing block log header")
    return header, [Block.from_dict(loads(line)) for line in lines[1:]]


def verify(path: str | Path) -> VerifyResult:
    """Revalidate a block log from genesis; report the first divergence."""
    try:
        header, blocks = parse_log(Path(path).read_text())
        lc, life = split_config(header["config"])
    except (KeyError, TypeError, ValueError, ScenarioError, AugurError) as e:
        return VerifyResult(False, message=f"unreadable block log: {e}")
    ledger = chain_ledger(lc, life)
    for block in blocks:
        working = ledger.state
        for tx in block.txs:
            try:
                working = ledger.apply(tx, working)
            except ValidationError as e:
                return VerifyResult(False, block.height, tx.txid, f"{e.code}: {e}")
        try:
            ledger.replay_block(block)
        except ValidationError as e:
            return VerifyResult(False, block.height, None, f"{e.code}: {e}")
    sums = chain_checksums(ledger.blocks, ledger)
    if not sums["conserved"]:
        return VerifyResult(False, ledger.height, None, "conservation checksums fail", sums)
    return VerifyResult(True, ledger.height, None, "ok", sums)
