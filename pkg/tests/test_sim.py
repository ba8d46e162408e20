import json

import pytest

from augur_sim import sim
from augur_sim.canonical import dumps, loads
from conftest import SCENARIOS, corpus


@pytest.mark.parametrize("path", corpus(), ids=lambda p: p.stem)
def test_corpus_conserves_and_verifies(path, tmp_path, run_scenario):
    s = run_scenario(path.stem)
    s.save(tmp_path)
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["checksums"]["conserved"]
    result = sim.verify(tmp_path / "blocks.jsonl")
    assert result.ok, result.message
    assert result.checksums["utxo_hash"] == rep["checksums"]["utxo_hash"]


def test_runs_are_deterministic(tmp_path):
    a = sim.run(SCENARIOS / "multi_event.json", tmp_path / "a")
    b = sim.run(SCENARIOS / "multi_event.json", tmp_path / "b")
    assert a.log_hash == b.log_hash
    assert (tmp_path / "a" / "blocks.jsonl").read_bytes() == (tmp_path / "b" / "blocks.jsonl").read_bytes()
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_seed_changes_the_chain():
    doc = json.loads((SCENARIOS / "walkthrough.json").read_text())
    a = sim.run(doc)
    doc["seed"] = "different"
    b = sim.run(doc)
    assert a.log_hash != b.log_hash
    assert a.balances == b.balances


def test_empty_scenario_has_only_genesis(run_scenario):
    rep = run_scenario("empty").report()
    assert rep.height == 0
    assert rep.checksums["conserved"]


def test_post_close_buy_aborts_with_its_index():
    with pytest.raises(sim.ActionFailed) as e:
        sim.run(SCENARIOS / "aborting" / "post_close_buy.json")
    assert e.value.index == 7 and e.value.code == "market-closed"


def test_expected_failures_are_recorded(run_scenario):
    rep = run_scenario("multi_event").report()
    assert {f["code"] for f in rep.expected_failures} == {"malformed", "insufficient-funds"}


def test_unexpected_success_aborts():
    doc = json.loads((SCENARIOS / "walkthrough.json").read_text())
    doc["actions"].insert(0, {"do": "advance", "blocks": 1, "expect": "market-closed"})
    with pytest.raises(sim.ActionFailed) as e:
        sim.run(doc)
    assert e.value.code == "unexpected-success"


@pytest.mark.parametrize("edit", [
    lambda d: d.update(actions={"do": "advance"}),
    lambda d: d.update(format="something-else"),
    lambda d: d.update(version=2),
    lambda d: d.update(actions=[{"do": "levitate"}]),
    lambda d: d["config"].update(no_such_key=1),
])
def test_bad_scenarios(edit):
    doc = json.loads((SCENARIOS / "walkthrough.json").read_text())
    edit(doc)
    with pytest.raises(sim.ScenarioError):
        sim.run(doc)


@pytest.fixture(scope="module")
def saved_log(tmp_path_factory):
    d = tmp_path_factory.mktemp("walk")
    sim.run(SCENARIOS / "walkthrough.json", d)
    return (d / "blocks.jsonl").read_text().splitlines()


def first_block_with(lines, tx_type):
    for i, line in enumerate(lines[1:], 1):
        b = loads(line)
        for j, tx in enumerate(b["txs"]):
            if tx["type"] == tx_type:
                return i, j
    raise LookupError(tx_type)


def tamper_value(lines):
    i, j = first_block_with(lines, "Buy")
    b = loads(lines[i])
    b["txs"][j]["vout"][0]["value"] += 1
    lines[i] = dumps(b)


def tamper_signature(lines):
    i, j = first_block_with(lines, "Transfer") if any('"Transfer"' in x for x in lines) else first_block_with(lines, "Buy")
    b = loads(lines[i])
    sig = b["txs"][j]["vin"][0]["scriptSig"]
    b["txs"][j]["vin"][0]["scriptSig"] = sig[:5] + ("0" if sig[5] != "0" else "1") + sig[6:]
    lines[i] = dumps(b)


def tamper_config(lines):
    h = loads(lines[0])
    h["config"]["block_interval"] = 601
    lines[0] = dumps(h)


def swap_blocks(lines):
    lines[3], lines[4] = lines[4], lines[3]


def drop_block(lines):
    del lines[4]


def tamper_timestamp(lines):
    b = loads(lines[2])
    b["timestamp"] += 1
    lines[2] = dumps(b)


def tamper_fee_meta(lines):
    i, j = first_block_with(lines, "Redemption")
    b = loads(lines[i])
    b["txs"][j]["cycle"] = 5
    lines[i] = dumps(b)


@pytest.mark.parametrize("tamper", [tamper_value, tamper_signature, tamper_config, swap_blocks, drop_block,
                                    tamper_timestamp, tamper_fee_meta])
def test_verify_rejects_tampering(saved_log, tmp_path, tamper):
    lines = list(saved_log)
    tamper(lines)
    p = tmp_path / "blocks.jsonl"
    p.write_text("\n".join(lines) + "\n")
    result = sim.verify(p)
    assert not result.ok
    assert result.message


def test_verify_accepts_the_untouched_log(saved_log, tmp_path):
    p = tmp_path / "blocks.jsonl"
    p.write_text("\n".join(saved_log) + "\n")
    assert sim.verify(p).ok


def test_verify_names_the_offending_transaction(saved_log, tmp_path):
    lines = list(saved_log)
    i, j = first_block_with(lines, "Buy")
    tamper_value(lines)
    p = tmp_path / "blocks.jsonl"
    p.write_text("\n".join(lines) + "\n")
    result = sim.verify(p)
    assert result.height == loads(lines[i])["height"]
    assert result.txid is not None


def test_unreadable_log(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text("not json\n")
    assert not sim.verify(p).ok
