"""Wire-format response cache with ID rewriting and TTL decrement on serve."""

from __future__ import annotations

import collections
import threading
import time
from dataclasses import dataclass
from typing import Callable

from ..wire import (CLASS_IN, RCODE_NOERROR, RCODE_NXDOMAIN, DnsMessage, Question,
                    canonical_name, decode_message, decrement_wire_ttls, min_answer_ttl,
                    rewrite_transaction_id, soa_minimum, ttl_offsets)

NEGATIVE_TTL_DEFAULT = 30

CacheKey = tuple[str, int, int]


def cache_key(q: Question | DnsMessage) -> CacheKey:
    if isinstance(q, DnsMessage):
        q = q.questions[0]
    return canonical_name(q.name), q.qtype, q.qclass or CLASS_IN


@dataclass(frozen=True)
class WireCacheEntry:
    key: CacheKey
    wire: bytes                 # transaction ID zeroed
    inserted_at: float
    min_ttl: int
    safety_margin_s: int
    offsets: tuple[int, ...]

    def fresh(self, now: float) -> bool:
        return (now - self.inserted_at + self.safety_margin_s) < self.min_ttl

    def serve(self, now: float, request_id: int) -> bytes:
        cut = int(now - self.inserted_at) + self.safety_margin_s
        return rewrite_transaction_id(decrement_wire_ttls(self.wire, cut, self.offsets), request_id)


def cacheable_ttl(msg: DnsMessage, negative_ttl: int = NEGATIVE_TTL_DEFAULT) -> int | None:
    """The lifetime to cache ``msg`` for, or None when it must not be cached."""
    if msg.header.tc or len(msg.questions) != 1:
        return None
    if msg.rcode == RCODE_NOERROR and msg.answers:
        return min_answer_ttl(msg)
    if msg.rcode in (RCODE_NOERROR, RCODE_NXDOMAIN):      # NODATA or NXDOMAIN
        neg = soa_minimum(msg)
        return negative_ttl if neg is None else neg
    return None


class WireCache:
    """Thread-safe cache of encoded responses with single-flight fetching."""

    def __init__(self, safety_margin_s: int = 0, clock: Callable[[], float] = time.monotonic,
                 negative_ttl: int = NEGATIVE_TTL_DEFAULT, max_entries: int = 10_000):
        if safety_margin_s < 0:
            raise ValueError("safety margin must be >= 0")
        self.safety_margin_s = int(safety_margin_s)
        self.clock = clock
        self.negative_ttl = negative_ttl
        self.max_entries = max_entries
        self._entries: collections.OrderedDict[CacheKey, WireCacheEntry] = collections.OrderedDict()
        self._lock = threading.Lock()
        self._inflight: dict[CacheKey, threading.Event] = {}
        self.hits = self.misses = self.evictions = self.fetches = 0

    def __len__(self):
        with self._lock:
            return len(self._entries)

    def __contains__(self, key):
        with self._lock:
            return key in self._entries

    def lookup(self, key: CacheKey, request_id: int, now: float | None = None) -> bytes | None:
        """Served bytes on a hit; None on a miss. Stale entries are dropped here."""
        now = self.clock() if now is None else now
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                self.misses += 1
                return None
            if not entry.fresh(now):
                del self._entries[key]
                self.evictions += 1
                self.misses += 1
                return None
            self._entries.move_to_end(key)
            self.hits += 1
        return entry.serve(now, request_id)

    def store(self, key: CacheKey, wire: bytes, now: float | None = None,
              msg: DnsMessage | None = None) -> WireCacheEntry | None:
        now = self.clock() if now is None else now
        msg = msg or decode_message(wire)
        ttl = cacheable_ttl(msg, self.negative_ttl)
        if ttl is None or ttl <= self.safety_margin_s:
            return None
        zeroed = rewrite_transaction_id(wire, 0)
        entry = WireCacheEntry(key, zeroed, now, ttl, self.safety_margin_s,
                               tuple(ttl_offsets(zeroed)))
        with self._lock:
            self._entries[key] = entry
            self._entries.move_to_end(key)
            while len(self._entries) > self.max_entries:
                self._entries.popitem(last=False)
                self.evictions += 1
        return entry

    def get_or_fetch(self, key: CacheKey, request_id: int,
                     fetch: Callable[[], bytes | None]) -> tuple[bytes | None, bool]:
        """Return (wire, hit). Concurrent misses on one key share a single ``fetch``.

        ``fetch`` returns upstream response bytes (any ID) or None on failure.
        Responses that cannot be cached are still returned to the caller
        that fetched them; waiters then fetch for themselves.
        """
        while True:
            wire = self.lookup(key, request_id)
            if wire is not None:
                return wire, True
            with self._lock:
                event = self._inflight.get(key)
                leader = event is None
                if leader:
                    event = self._inflight[key] = threading.Event()
            if not leader:
                event.wait()
                wire = self.lookup(key, request_id)
                if wire is not None:
                    return wire, True
                # the leader got nothing cacheable; take our own turn
                continue
            try:
                self.fetches += 1
                upstream = fetch()
                if upstream is None:
                    return None, False
                try:
                    self.store(key, upstream)
                except ValueError:
                    pass
                return rewrite_transaction_id(upstream, request_id), False
            finally:
                with self._lock:
                    del self._inflight[key]
                event.set()

    def clear(self):
        with self._lock:
            self._entries.clear()
