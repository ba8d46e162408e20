from __future__ import annotations

import functools
import json
from pathlib import Path

import pytest

from augur_sim.ledger import Units
from augur_sim.lifecycle import builders as bld
from augur_sim.lifecycle import make_ledger
from augur_sim.sim import Simulation, chain_ledger

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
GOLDEN = Path(__file__).resolve().parent / "golden"


def corpus() -> list[Path]:
    return sorted(SCENARIOS.glob("*.json"))


@functools.lru_cache(maxsize=None)
def _run(name: str) -> Simulation:
    sim = Simulation(json.loads((SCENARIOS / f"{name}.json").read_text()))
    sim.run()
    return sim


@pytest.fixture
def run_scenario():
    """Cached completed simulation by scenario name; treat as read-only."""
    return _run


def tx_contexts(sim: Simulation):
    """Yield (state before tx, tx, ledger) for every transaction of a finished run."""
    ledger = chain_ledger(sim.ledger_config, sim.life_config)
    for block in sim.ledger.blocks:
        working = ledger.state
        for tx in block.txs:
            yield working, tx, ledger
            working = ledger.apply(tx, working)
        ledger.replay_block(block)


@pytest.fixture
def make_chain():
    """Factory for fresh lifecycle ledgers with funded actors and a block-mining helper."""
    from augur_sim.crypto import KeyPair
    from augur_sim.amounts import to_fixed

    class Chain:
        def __init__(self, reputation=None, quorum=2):
            from augur_sim.lifecycle.model import LifecycleConfig
            self.ledger = make_ledger(lifecycle=LifecycleConfig(quorum_required=quorum))
            self.keys = {n: KeyPair.from_seed(f"test:{n}") for n in ("joe", "paul", "helga", "jane", "bea")}
            alloc = [(k.address, Units.BITCOIN, to_fixed(100)) for k in self.keys.values()]
            rep = reputation or {"helga": [10], "jane": [40, 2], "bea": [20]}
            for n, vals in rep.items():
                alloc += [(self.keys[n].address, Units.REPUTATION, to_fixed(v)) for v in vals]
            self.mine(bld.faucet(alloc))

        @property
        def state(self):
            return self.ledger.state

        @property
        def reg(self):
            return bld.registry(self.ledger.state)

        def mine(self, *txs):
            block, rejected = self.ledger.produce_block(list(txs))
            if rejected:
                raise rejected[0].error
            return block

        def addr(self, n):
            return self.keys[n].address

    return Chain


@pytest.fixture
def chain(make_chain):
    return make_chain()


_criteria: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, title = mark.args
    if rep.when == "call" or n not in _criteria:
        _criteria[n] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, verdict = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d} {verdict}  {title}")
