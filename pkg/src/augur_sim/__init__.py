"""Desk-scale deterministic prediction-market chain: UTXO ledger, script VM,
LMSR market maker and reputation-weighted PCA consensus."""

__version__ = "0.1.0"
