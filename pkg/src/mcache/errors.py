"""Exceptions shared by the resource manager, scheduler and cache."""
from __future__ import annotations


class TransactionAborted(Exception):
    """The transaction was rolled back; the client may start a new one."""

    def __init__(self, tx: int, reason: str = "aborted"):
        super().__init__(f"T{tx} aborted ({reason})")
        self.tx = tx
        self.reason = reason


class TransactionStateError(RuntimeError):
    """An operation was issued for a transaction that is not active."""
