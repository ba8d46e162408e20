"""Frozen transaction listings from the multi-event scenario.

Regenerate with ``python3 tests/test_golden_scripts.py`` after an intentional
format change, and review the diff.
"""
import copy
import sys
from decimal import Decimal
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))
from conftest import GOLDEN, _run, tx_contexts  # noqa: E402

from augur_sim.canonical import dumps, loads  # noqa: E402
from augur_sim.errors import ValidationError  # noqa: E402
from augur_sim.ledger import Transaction  # noqa: E402

KINDS = ["CreateEvent", "CreateMarket", "Buy", "Sell", "Report", "Redemption"]


def first_of_each():
    out = {}
    for state, tx, ledger in tx_contexts(_run("multi_event")):
        if tx.type in KINDS and tx.type not in out:
            out[tx.type] = (state, tx, ledger)
    return out


@pytest.fixture(scope="module")
def samples():
    return first_of_each()


def golden_path(kind):
    return GOLDEN / f"{kind}.json"


@pytest.mark.parametrize("kind", KINDS)
def test_listing_matches_golden(samples, kind):
    _, tx, _ = samples[kind]
    want = loads(golden_path(kind).read_bytes())
    assert loads(dumps(tx.to_dict())) == want


@pytest.mark.parametrize("kind", KINDS)
def test_golden_validates_against_its_state(samples, kind):
    state, _, ledger = samples[kind]
    tx = Transaction.from_dict(loads(golden_path(kind).read_bytes()))
    report = ledger.validate(tx, state)
    assert report, report.message


def leaves(obj, path=()):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from leaves(v, path + (k,))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from leaves(v, path + (i,))
    else:
        yield path, obj


def mutate(value):
    if isinstance(value, bool):
        return not value
    if value is None:
        return 0
    if isinstance(value, int):
        return value + 1
    if isinstance(value, Decimal):
        return value + Decimal("0.00000001")
    if isinstance(value, str):
        if not value:
            return "0"
        last = value[-1]
        swap = "1" if last == "0" else "0"
        return value[:-1] + swap
    raise TypeError(type(value))


def setpath(obj, path, value):
    for p in path[:-1]:
        obj = obj[p]
    obj[path[-1]] = value


@pytest.mark.parametrize("kind", KINDS)
def test_every_single_leaf_mutation_is_rejected(samples, kind):
    state, tx, ledger = samples[kind]
    base = loads(dumps(tx.to_dict()))
    survivors = []
    count = 0
    for path, value in leaves(base):
        d = copy.deepcopy(base)
        setpath(d, path, mutate(value))
        count += 1
        try:
            bad = Transaction.from_dict(d)
        except ValidationError:
            continue
        if ledger.validate(bad, state):
            survivors.append(path)
    assert count > 10
    assert survivors == []


if __name__ == "__main__":
    GOLDEN.mkdir(exist_ok=True)
    for kind, (_, tx, _) in first_of_each().items():
        golden_path(kind).write_text(tx.listing() + "\n")
        print("wrote", golden_path(kind))
