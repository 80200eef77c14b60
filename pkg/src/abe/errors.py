"""Shared exception types."""

from __future__ import annotations


class InvalidTokenError(ValueError):
    """A token id is out of range for the vocabulary it was used with."""


class AdapterError(RuntimeError):
    """A model adapter failed; carries the adapter identity."""

    def __init__(self, identity: str, message: str) -> None:
        super().__init__(f"[{identity}] {message}")
        self.identity = identity


class ProtocolError(AdapterError):
    """Wire-protocol violation (bad frame, version mismatch, timeout)."""
