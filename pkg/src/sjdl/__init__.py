"""Signed job descriptions with mediated delegation, a protocol simulator and a forensic ledger."""

__version__ = "0.1.0"
