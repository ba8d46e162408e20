"""Command-line interface.

``simrun`` and ``verify`` work on scenario files and block logs.  The
stateful commands (``event``, ``market``, ``trade``, ``report``, ``redeem``,
``feeds``) keep a session journal in ``--home``: each command appends one
scenario action and the whole journal is replayed, so a session is itself a
scenario that ``simrun`` can reproduce.
"""
from __future__ import annotations

import json
import sys
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

import click

from . import feeds, lmsr
from .canonical import dumps, ftod, loads
from .errors import AugurError
from .ledger import Units
from .sim import (
    SCENARIO_FORMAT, VERSION, ActionFailed, ScenarioError, Simulation, load_scenario, run, verify,
)

EXIT_OK, EXIT_INVALID, EXIT_SCENARIO = 0, 1, 2
JOURNAL = "session.json"


def _emit(obj, as_json: bool, human) -> None:
    if as_json:
        click.echo(dumps(obj, canonical=False, indent=2))
    else:
        human(obj)


def _table(rows: list[list], header: list[str]) -> None:
    cells = [header] + [[dumps(c) if isinstance(c, Decimal) else str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for j, r in enumerate(cells):
        click.echo("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        if j == 0:
            click.echo("  ".join("-" * w for w in widths))


def _value(text: str):
    """Parse a CLI outcome: JSON literal if possible, else the raw string."""
    try:
        return loads(text)
    except ValueError:
        return text


@click.group()
@click.option("--home", type=click.Path(file_okay=False), default=".augur-sim", envvar="AUGUR_SIM_HOME",
              show_default=True, help="Session directory for the stateful commands.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_context
def main(ctx: click.Context, home: str, as_json: bool) -> None:
    """Deterministic prediction-market chain simulator."""
    ctx.obj = {"home": Path(home), "json": as_json}


def _json_flag(f):
    return click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")(f)


def _want_json(ctx: click.Context, local: bool) -> bool:
    return local or ctx.obj["json"]


def _print_report(rep: dict) -> None:
    click.echo(f"scenario {rep['name']!r}: height {rep['height']}, block log {rep['block_log_hash'][:16]}")
    rows = [[n, b["bitcoin"], b["shares"], b["reputation"]] for n, b in rep["balances"].items()]
    if rows:
        _table(rows, ["actor", "bitcoin", "shares", "reputation"])
    for name, m in rep["markets"].items():
        last = m["price_history"][-1][1] if m["price_history"] else []
        click.echo(f"market {name}: {m['state']}, prices {[str(p) for p in last]}")
    for r in rep["redemptions"]:
        what = r.get("revote") and f"re-vote ({r['revote']})" or r.get("mode", "consensus")
        click.echo(f"redemption of {r['branch']} cycle {r['cycle']} at height {r['height']}: {what}")
    ok = "pass" if rep["checksums"]["conserved"] else "FAIL"
    click.echo(f"conservation checksums: {ok}")


@main.command()
@click.argument("scenario", type=click.Path())
@click.option("--out", type=click.Path(file_okay=False), help="Write blocks.jsonl, utxo_snapshot.json, report.json.")
@_json_flag
@click.pass_context
def simrun(ctx, scenario, out, as_json):
    """Run a scenario file."""
    try:
        rep = run(scenario, out)
    except ScenarioError as e:
        click.echo(f"scenario error: {e}", err=True)
        sys.exit(EXIT_SCENARIO)
    except ActionFailed as e:
        _emit({"ok": False, "action": e.index, "code": e.code, "message": e.reason}, _want_json(ctx, as_json),
              lambda o: click.echo(f"action {o['action']} failed: {o['code']}: {o['message']}", err=True))
        sys.exit(EXIT_INVALID)
    _emit(rep.to_dict(), _want_json(ctx, as_json), _print_report)


@main.command("verify")
@click.argument("blocklog", type=click.Path())
@_json_flag
@click.pass_context
def verify_cmd(ctx, blocklog, as_json):
    """Revalidate a block log from genesis."""
    if not Path(blocklog).exists():
        click.echo(f"no such block log: {blocklog}", err=True)
        sys.exit(EXIT_SCENARIO)
    res = verify(blocklog)
    out = {"ok": res.ok, "height": res.height, "txid": res.txid, "message": res.message}

    def human(o):
        if o["ok"]:
            click.echo(f"ok: {o['height'] + 1} blocks verified")
        else:
            where = f" at height {o['height']}" if o["height"] is not None else ""
            tx = f" in {o['txid']}" if o["txid"] else ""
            click.echo(f"FAILED{where}{tx}: {o['message']}")

    _emit(out, _want_json(ctx, as_json), human)
    sys.exit(EXIT_OK if res.ok else EXIT_INVALID)


@main.command()
@click.option("--loss-limit", type=float, required=True)
@click.option("--outcomes", "n", type=int, default=2, show_default=True)
@click.option("--q", "q", default="", help="Comma-separated outstanding shares per outcome.")
@click.option("--outcome", type=int, default=0, show_default=True)
@click.option("--shares", type=float, required=True, help="Negative to sell.")
@_json_flag
@click.pass_context
def quote(ctx, loss_limit, n, q, outcome, shares, as_json):
    """Price a trade against a bare LMSR state."""
    qs = tuple(float(x) for x in q.split(",")) if q else (0.0,) * n
    try:
        state = lmsr.LmsrState(qs, loss_limit)
        res = lmsr.quote(state, outcome, shares)
    except (AugurError, ValueError, IndexError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_INVALID)
    out = {k: ([ftod(x) for x in v] if isinstance(v, list) else ftod(v) if isinstance(v, float) else v)
           for k, v in res.items()}
    _emit(out, _want_json(ctx, as_json), lambda o: [click.echo(f"{k}: {dumps(v)}") for k, v in o.items()])


# Session journal
def _journal_path(ctx) -> Path:
    return ctx.obj["home"] / JOURNAL


def _load_session(ctx) -> dict:
    p = _journal_path(ctx)
    if not p.exists():
        click.echo(f"no session in {ctx.obj['home']}; run `init` first", err=True)
        sys.exit(EXIT_SCENARIO)
    return load_scenario(p)


def _replay(doc: dict) -> Simulation:
    sim = Simulation(doc)
    for i, a in enumerate(doc["actions"]):
        sim.step(a, i)
    return sim


def _act(ctx, action: dict, as_json: bool = False):
    """Append ``action`` to the session if it succeeds, and print its effect."""
    doc = _load_session(ctx)
    try:
        sim = _replay(doc)
        result = sim.step(action, len(doc["actions"]))
    except ScenarioError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_SCENARIO)
    except ActionFailed as e:
        _emit({"ok": False, "code": e.code, "message": e.reason}, _want_json(ctx, as_json),
              lambda o: click.echo(f"rejected: {o['code']}: {o['message']}", err=True))
        sys.exit(EXIT_INVALID)
    doc["actions"].append(action)
    _journal_path(ctx).write_text(dumps(doc, canonical=False, indent=2) + "\n")
    out: dict = {"ok": True, "height": sim.ledger.height}
    if hasattr(result, "txid"):
        out.update({"txid": result.txid, "type": result.type})
    elif isinstance(result, dict):
        out["result"] = result
    _emit(out, _want_json(ctx, as_json), lambda o: click.echo(
        f"{o.get('type', action['do'])} {o.get('txid', '')} accepted at height {o['height']}".replace("  ", " ")))
    return sim, result


@main.command()
@click.option("--seed", default="session", show_default=True)
@click.option("--scenario", type=click.Path(exists=True), help="Start from a scenario's config, genesis and actions.")
@click.option("--fund", multiple=True, metavar="ACTOR:UNIT:AMOUNT", help="Genesis allocation, repeatable.")
@click.option("--force", is_flag=True, help="Replace an existing session.")
@click.pass_context
def init(ctx, seed, scenario, fund, force):
    """Start a session."""
    p = _journal_path(ctx)
    if p.exists() and not force:
        click.echo(f"session already exists in {ctx.obj['home']} (use --force)", err=True)
        sys.exit(EXIT_SCENARIO)
    if scenario:
        doc = load_scenario(scenario)
        doc.setdefault("genesis", {})
        doc.setdefault("actors", [])
        doc.setdefault("actions", [])
    else:
        doc = {"format": SCENARIO_FORMAT, "version": VERSION, "name": "session", "seed": seed,
               "config": {}, "actors": [], "genesis": {}, "actions": []}
    for f in fund:
        try:
            actor, unit, amount = f.split(":")
            Units(unit)
        except ValueError:
            raise click.BadParameter(f"expected ACTOR:UNIT:AMOUNT, got {f!r}", param_hint="--fund")
        g = doc["genesis"].setdefault(actor, {})
        prev = g.get(unit, [])
        g[unit] = (prev if isinstance(prev, list) else [prev]) + [_value(amount)]
        if actor not in doc["actors"]:
            doc["actors"].append(actor)
    try:
        sim = _replay(doc)
    except (ScenarioError, ActionFailed) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_SCENARIO)
    ctx.obj["home"].mkdir(parents=True, exist_ok=True)
    p.write_text(dumps(doc, canonical=False, indent=2) + "\n")
    click.echo(f"session initialised at height {sim.ledger.height} with {len(sim.keys)} actors")


@main.command()
@_json_flag
@click.pass_context
def status(ctx, as_json):
    """Balances, markets and branch quorum of the session."""
    doc = _load_session(ctx)
    sim = _replay(doc)
    reg = sim.registry
    now = sim.ledger.time
    ids = {v: k for k, v in sim.names.items()}
    out = {
        "height": sim.ledger.height,
        "time": now,
        "balances": sim.report().balances,
        "markets": {ids.get(mid, mid): {"id": mid, "state": m.state, "prices": [ftod(p) for p in m.prices()]}
                    for mid, m in reg.markets.items()},
        "branches": {name: {"cycle": b.cycle, **reg.quorum(name, now)} for name, b in sorted(reg.branches.items())},
    }

    def human(o):
        click.echo(f"height {o['height']}, time {o['time']}")
        _table([[n, b["bitcoin"], b["shares"], b["reputation"]] for n, b in o["balances"].items()],
               ["actor", "bitcoin", "shares", "reputation"])
        for n, m in o["markets"].items():
            click.echo(f"market {n} [{m['state']}] prices {[str(p) for p in m['prices']]}")
        for n, b in o["branches"].items():
            click.echo(f"branch {n} cycle {b['cycle']}: {b['reported']}/{b['required']} reported, "
                       f"matured={b['matured']}, met={b['met']}")

    _emit(out, _want_json(ctx, as_json), human)


@main.command()
@click.option("--blocks", type=int, default=1, show_default=True)
@_json_flag
@click.pass_context
def advance(ctx, blocks, as_json):
    """Mine empty blocks."""
    _act(ctx, {"do": "advance", "blocks": blocks}, as_json)


@main.group()
def event():
    """Event commands."""


@event.command("create")
@click.option("--actor", required=True)
@click.option("--name", help="Session name for the event.")
@click.option("--description", required=True)
@click.option("--branch", required=True)
@click.option("--expires-in-blocks", type=int, default=1, show_default=True)
@click.option("--outcomes", help="Comma-separated labels, or 'a,b' numbers for a scalar range; binary if omitted.")
@click.option("--fee")
@_json_flag
@click.pass_context
def event_create(ctx, actor, name, description, branch, expires_in_blocks, outcomes, fee, as_json):
    a = {"do": "create-event", "actor": actor, "description": description, "branch": branch,
         "expires_in_blocks": expires_in_blocks}
    if name:
        a["name"] = name
    if outcomes:
        a["outcomes"] = [_value(x) for x in outcomes.split(",")]
    if fee:
        a["fee"] = _value(fee)
    _act(ctx, a, as_json)


@main.group()
def market():
    """Market commands."""


@market.command("create")
@click.option("--actor", required=True)
@click.option("--name")
@click.option("--title", required=True)
@click.option("--event", "events", multiple=True, required=True)
@click.option("--loss-limit", required=True)
@click.option("--trading-fee", default="0.005", show_default=True)
@_json_flag
@click.pass_context
def market_create(ctx, actor, name, title, events, loss_limit, trading_fee, as_json):
    a = {"do": "create-market", "actor": actor, "title": title, "events": list(events),
         "loss_limit": _value(loss_limit), "trading_fee": _value(trading_fee)}
    if name:
        a["name"] = name
    _act(ctx, a, as_json)


@main.group()
def trade():
    """Buy or sell outcome shares."""


def _trade_cmd(side: str):
    @click.option("--actor", required=True)
    @click.option("--market", "market_", required=True)
    @click.option("--event", "event_", required=True)
    @click.option("--outcome", required=True, help="true/false for binary events, index otherwise.")
    @click.option("--shares", required=True)
    @_json_flag
    @click.pass_context
    def cmd(ctx, actor, market_, event_, outcome, shares, as_json):
        _act(ctx, {"do": side, "actor": actor, "market": market_, "event": event_, "outcome": _value(outcome),
                   "shares": _value(shares)}, as_json)

    cmd.__doc__ = f"{side.capitalize()} shares of one outcome."
    return cmd


trade.command("buy")(_trade_cmd("buy"))
trade.command("sell")(_trade_cmd("sell"))


@main.group()
def report():
    """Commit and reveal reports."""


@report.command("submit")
@click.option("--actor", required=True)
@click.option("--branch", required=True)
@click.option("--entry", "entries", multiple=True, metavar="EVENT=VALUE",
              help="Repeatable; omitted events are NO REPORT, VALUE may be INVALID.")
@_json_flag
@click.pass_context
def report_submit(ctx, actor, branch, entries, as_json):
    parsed = {}
    for e in entries:
        k, sep, v = e.partition("=")
        if not sep:
            raise click.BadParameter(f"expected EVENT=VALUE, got {e!r}", param_hint="--entry")
        parsed[k] = _value(v)
    _act(ctx, {"do": "report", "actor": actor, "branch": branch, "entries": parsed}, as_json)


@report.command("reveal")
@click.option("--actor", required=True)
@click.option("--branch", required=True)
@_json_flag
@click.pass_context
def report_reveal(ctx, actor, branch, as_json):
    _act(ctx, {"do": "reveal", "actor": actor, "branch": branch}, as_json)


@main.command()
@click.option("--branch", required=True)
@click.option("--max-blocks", type=int, default=10, show_default=True)
@_json_flag
@click.pass_context
def redeem(ctx, branch, max_blocks, as_json):
    """Mine blocks until the branch's Redemption is included."""
    doc = _load_session(ctx)
    sim = _replay(doc)
    before = len(sim.redemptions)
    for n in range(1, max_blocks + 1):
        sim.step({"do": "advance", "blocks": 1}, len(doc["actions"]))
        if len(sim.redemptions) > before and any(r["branch"] == branch for r in sim.redemptions[before:]):
            doc["actions"].append({"do": "advance", "blocks": n})
            _journal_path(ctx).write_text(dumps(doc, canonical=False, indent=2) + "\n")
            r = sim.redemptions[-1]
            _emit(r, _want_json(ctx, as_json), lambda o: click.echo(
                f"redeemed {o['branch']} cycle {o['cycle']} at height {o['height']} ({o['txid']})"
                + (f": re-vote, {o['revote']}" if o.get("revote") else "")))
            return
    click.echo(f"no redemption of {branch!r} within {max_blocks} blocks", err=True)
    sys.exit(EXIT_INVALID)


@main.group("feeds")
def feeds_group():
    """Third-party outcome feeds."""


@feeds_group.command("source")
@click.option("--actor", required=True)
@click.option("--file", "path", type=click.Path(), help="JSON map of event to outcome; omit for an offline source.")
@_json_flag
@click.pass_context
def feeds_source(ctx, actor, path, as_json):
    """Attach a feed source to a reputation holder (file contents are recorded in the session)."""
    answers = feeds.LocalFileTransport(path).fetch() if path else None
    _act(ctx, {"do": "feed-source", "actor": actor, "answers": answers}, as_json)


@feeds_group.command("collect")
@click.option("--branch", required=True)
@click.option("--log", "log_path", type=click.Path(dir_okay=False), help="Append signed observations as JSON lines.")
@_json_flag
@click.pass_context
def feeds_collect(ctx, branch, log_path, as_json):
    """Query every holder's source for the branch ballot and aggregate."""
    _, entry = _act(ctx, {"do": "collect-feeds", "branch": branch}, as_json)
    if log_path:
        with open(log_path, "a") as f:
            for obs in entry["observations"]:
                f.write(dumps(obs) + "\n")


@feeds_group.command("aggregate")
@click.argument("observations", type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold", default="0.95", show_default=True)
@_json_flag
@click.pass_context
def feeds_aggregate(ctx, observations, threshold, as_json):
    """Tally a JSON-lines observation log."""
    obs = [loads(line) for line in Path(observations).read_text().splitlines() if line.strip()]
    try:
        aggs = feeds.aggregate(obs, Fraction(threshold))
    except ValueError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_SCENARIO)
    out = [a.to_dict() for _, a in sorted(aggs.items())]
    _emit(out, _want_json(ctx, as_json), lambda o: [click.echo(
        f"{a['event']}: {a['decision']}" + (f" -> {json.dumps(a['value'], default=str)}" if a["value"] is not None else ""))
        for a in o])


@feeds_group.command("challenge")
@click.option("--actor", required=True)
@click.option("--event", "event_", required=True)
@click.option("--fee")
@_json_flag
@click.pass_context
def feeds_challenge(ctx, actor, event_, fee, as_json):
    """Pay the challenge fee to force a reporting vote on an event."""
    a = {"do": "challenge", "actor": actor, "event": event_}
    if fee:
        a["fee"] = _value(fee)
    _act(ctx, a, as_json)


if __name__ == "__main__":
    main()
