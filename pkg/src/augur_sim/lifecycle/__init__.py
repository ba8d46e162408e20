"""Prediction-market lifecycle on top of the UTXO ledger."""
from __future__ import annotations

from ..ledger import Ledger, LedgerConfig
from .builders import (
    buy, challenge, create_event, create_market, faucet, registry, sell, submit_report, transfer,
)
from .model import SHARES_PER_EVENT, Branch, Event, LifecycleConfig, Market, Registry
from .rules import end_block, lifecycle_rules
from .settlement import build_feed_redemption, build_redemption, feed_resolution

__all__ = [
    "SHARES_PER_EVENT", "Branch", "Event", "LifecycleConfig", "Market", "Registry",
    "buy", "sell", "challenge", "create_event", "create_market", "faucet", "registry",
    "submit_report", "transfer", "build_redemption", "build_feed_redemption", "feed_resolution",
    "make_ledger",
]


def make_ledger(config: LedgerConfig | None = None, lifecycle: LifecycleConfig | None = None) -> Ledger:
    return Ledger(config, lifecycle_rules(), Registry(lifecycle), on_block=end_block)
