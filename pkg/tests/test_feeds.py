from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from augur_sim import feeds
from augur_sim.amounts import to_fixed
from augur_sim.crypto import KeyPair

A = KeyPair.from_seed("feeds:a")
B = KeyPair.from_seed("feeds:b")
C = KeyPair.from_seed("feeds:c")
EV = "ab" * 20


def obs(key, value, weight, event=EV):
    return feeds.sign_observation(key, event, value, to_fixed(weight))


@pytest.mark.parametrize("wa,wb,resolved", [
    ("95", "5", True), ("94.9", "5.1", False), ("90", "10", False), ("94.99999999", "5.00000001", False), ("95.00000001", "4.99999999", True),
])
def test_threshold_split(wa, wb, resolved):
    agg = feeds.aggregate([obs(A, 1, wa), obs(B, 0, wb)])[EV]
    assert agg.resolved is resolved
    assert agg.value == (1 if resolved else None)


def test_unit_threshold_needs_unanimity():
    assert feeds.aggregate([obs(A, 1, 99), obs(B, 0, 1)], 1)[EV].decision == "vote-required"
    assert feeds.aggregate([obs(A, 1, 99), obs(B, 1, 1)], 1)[EV].value == 1


def test_forged_signature_is_discarded():
    bad = obs(B, 0, 50)
    bad["weight"] = "5000"
    got = feeds.aggregate([obs(A, 1, 95), bad])[EV]
    assert got.total == to_fixed(95) and got.value == 1
    stolen = obs(B, 0, 50)
    stolen["holder"] = C.address
    assert feeds.aggregate([stolen]) == {}


def test_repeated_observations_count_once():
    agg = feeds.aggregate([obs(A, 1, 5), obs(A, 1, 5), obs(B, 0, 95)])[EV]
    assert agg.total == to_fixed(100) and agg.value == 0


def test_offline_source_abstains():
    sources = [
        (A, feeds.FeedSource("a", feeds.StaticTransport({EV: 1}))),
        (B, feeds.FeedSource("b", feeds.StaticTransport(None))),
        (C, feeds.FeedSource("c", feeds.StaticTransport({EV: 1}))),
    ]
    weights = {A.address: to_fixed(30), B.address: to_fixed(60), C.address: to_fixed(10)}
    collected = feeds.collect(sources, [EV], weights)
    assert {o["holder"] for o in collected} == {A.address, C.address}
    assert feeds.aggregate(collected)[EV].value == 1


def test_local_file_transport(tmp_path):
    p = tmp_path / "feed.json"
    p.write_text('{"%s": 0.25}' % EV)
    assert str(feeds.LocalFileTransport(p).fetch()[EV]) == "0.25"
    with pytest.raises(feeds.FeedUnavailable):
        feeds.LocalFileTransport(tmp_path / "missing.json").fetch()


@pytest.mark.parametrize("theta", [Fraction(1, 2), 0.3, 1.01])
def test_threshold_bounds(theta):
    with pytest.raises(ValueError):
        feeds.aggregate([], theta)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0, 1]), st.integers(1, 10**6)), min_size=1, max_size=3),
       st.integers(1, 1000))
def test_scaling_weights_keeps_the_decision(entries, k):
    keys = [A, B, C]
    base = [feeds.sign_observation(keys[i], EV, v, w) for i, (v, w) in enumerate(entries)]
    scaled = [feeds.sign_observation(keys[i], EV, v, w * k) for i, (v, w) in enumerate(entries)]
    assert feeds.aggregate(base)[EV].value == feeds.aggregate(scaled)[EV].value


def test_aggregate_to_dict():
    d = feeds.aggregate([obs(A, 1, 95), obs(B, 0, 5)])[EV].to_dict()
    assert d["decision"] == "resolved" and d["threshold"] == "19/20"
