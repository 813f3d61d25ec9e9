"""Client-side transactional method cache.

One cache is shared by all client threads.  Each transaction keeps the list
``L`` of hits it has not yet reported to the server.  With recovery locking
on, every result a transaction stores after its first write stays private to
that transaction until it commits; an abort deletes it.
"""
from __future__ import annotations

import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

from .scheduler import MId, Response


def canonical_args(args: tuple) -> str:
    """Deterministic text encoding of a tuple of primitive values."""
    return json.dumps(list(args), sort_keys=True, separators=(",", ":"), default=repr)


@dataclass(frozen=True)
class CacheKey:
    method: str
    receiver: Any
    args: str

    @classmethod
    def of(cls, method: str, receiver: Any, args: tuple) -> "CacheKey":
        return cls(method, receiver, canonical_args(args))


@dataclass
class CacheEntry:
    key: CacheKey
    result: Any
    mid: MId
    locked_by: Optional[int] = None


@dataclass
class ClientTxState:
    tx_id: int
    L: list = field(default_factory=list)
    write_occurred: bool = False
    produced: list = field(default_factory=list)
    hits: int = 0
    misses: int = 0


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    invalidations: int = 0
    evictions: int = 0
    server_evictions: int = 0


class ClientCache:
    def __init__(self, capacity: int = 4000, recovery_locking: bool = True, serve_hits: bool = True):
        self.capacity = capacity
        self.recovery_locking = recovery_locking
        self.serve_hits = serve_hits
        self._entries: "OrderedDict[CacheKey, CacheEntry]" = OrderedDict()
        self._by_mid: dict[MId, CacheKey] = {}
        self._lock = threading.RLock()
        self.stats = CacheStats()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: CacheKey) -> bool:
        return key in self._entries

    def entry(self, key: CacheKey) -> CacheEntry | None:
        return self._entries.get(key)

    def entries(self) -> list[CacheEntry]:
        with self._lock:
            return list(self._entries.values())

    # -- hit path --------------------------------------------------------

    def lookup(self, tx: ClientTxState, key: CacheKey) -> tuple[bool, Any]:
        """Serve a hit if allowed; the hit is appended to ``tx.L`` atomically."""
        with self._lock:
            e = self._entries.get(key)
            if self.serve_hits and e is not None and e.locked_by in (None, tx.tx_id):
                tx.L.append(e.mid)
                tx.hits += 1
                self.stats.hits += 1
                self._entries.move_to_end(key)
                return True, e.result
            tx.misses += 1
            self.stats.misses += 1
            return False, None

    def take_hits(self, tx: ClientTxState) -> list[MId]:
        with self._lock:
            hits, tx.L = tx.L, []
            return hits

    def invoke(self, tx: ClientTxState, key: CacheKey, delegate: Callable[[list[MId]], Response]) -> Any:
        """Synchronous hit-or-delegate, for callers that run the server in-process."""
        hit, result = self.lookup(tx, key)
        if hit:
            return result
        res = delegate(self.take_hits(tx))
        self.apply_response(tx, key, res)
        return res.result

    # -- response path ---------------------------------------------------

    def apply_response(self, tx: ClientTxState, key: CacheKey, res: Response) -> None:
        with self._lock:
            if not res.cachable:
                tx.write_occurred = True
            self.apply_invalidations(res.h)
            self.apply_server_evictions(res.evicted)
            if res.cachable and res.m is not None:
                self._store(tx, CacheEntry(key, res.result, res.m))

    def _store(self, tx: ClientTxState, entry: CacheEntry) -> None:
        old = self._entries.get(entry.key)
        if old is not None:
            if old.locked_by not in (None, tx.tx_id):
                return
            self._drop(old.key)
        self.on_store(tx, entry)
        self._entries[entry.key] = entry
        self._by_mid[entry.mid] = entry.key
        self.lru_evict(self.capacity)

    def on_store(self, tx: ClientTxState, entry: CacheEntry) -> None:
        if self.recovery_locking and tx.write_occurred:
            entry.locked_by = tx.tx_id
            tx.produced.append(entry.key)

    def apply_invalidations(self, h: Iterable[MId]) -> int:
        removed = 0
        with self._lock:
            for m in h:
                key = self._by_mid.get(m)
                if key is not None:
                    self._drop(key)
                    removed += 1
            self.stats.invalidations += removed
        return removed

    def apply_server_evictions(self, mids: Iterable[MId]) -> int:
        removed = 0
        with self._lock:
            for m in mids:
                key = self._by_mid.get(m)
                if key is not None:
                    self._drop(key)
                    removed += 1
            self.stats.server_evictions += removed
        return removed

    def _drop(self, key: CacheKey) -> None:
        e = self._entries.pop(key, None)
        if e is not None and self._by_mid.get(e.mid) == key:
            del self._by_mid[e.mid]

    # -- transaction end -------------------------------------------------

    def on_commit(self, tx: ClientTxState) -> None:
        with self._lock:
            for key in tx.produced:
                e = self._entries.get(key)
                if e is not None and e.locked_by == tx.tx_id:
                    e.locked_by = None
            self._reset(tx)
            self.lru_evict(self.capacity)

    def on_abort(self, tx: ClientTxState) -> None:
        with self._lock:
            for key in tx.produced:
                e = self._entries.get(key)
                if e is not None and e.locked_by == tx.tx_id:
                    self._drop(key)
            self._reset(tx)

    @staticmethod
    def _reset(tx: ClientTxState) -> None:
        tx.produced = []
        tx.L = []
        tx.write_occurred = False

    # -- replacement -----------------------------------------------------

    def lru_touch(self, key: CacheKey) -> None:
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)

    def lru_evict(self, capacity: int) -> list[CacheEntry]:
        """Evict least recently used unlocked entries until at most ``capacity`` remain."""
        evicted = []
        with self._lock:
            excess = len(self._entries) - capacity
            if excess <= 0:
                return evicted
            for e in self._entries.values():
                if len(evicted) >= excess:
                    break
                if e.locked_by is None:
                    evicted.append(e)
            for e in evicted:
                self._drop(e.key)
            self.stats.evictions += len(evicted)
        return evicted
