"""Multi-question queries with opportunistic partial responses and fan-out fallback."""

from __future__ import annotations

import dataclasses
import enum
import socket
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import httpx

from ..transports import Pools, Protocol, Result, TransportConfig, exchange
from ..transports.base import Clock, query_id
from ..transports.do53 import stream_do53
from ..transports.doh import STREAM_CONTENT_TYPE
from ..transports.dot import read_frame
from ..wire import (RCODE_NOERROR, DnsMessage, Edns, Question, WireError, canonical_name,
                    decode_message, encode_message, make_query, names_equal)
from .options import PARTIAL_OPTION_CODE, Role, partial_option, partial_role

MAX_BATCH = 64
CAPABILITY_TTL_S = 3600.0


class Tri(str, enum.Enum):
    UNKNOWN = "Unknown"
    YES = "Yes"
    NO = "No"


class MultiQuestion(str, enum.Enum):
    IGNORES = "Ignores"
    FIRST_ONLY = "AnswersFirstOnly"
    FULL = "Full"


@dataclass(frozen=True)
class ServerCapabilities:
    supports_partial: Tri = Tri.UNKNOWN
    multi_question_behavior: MultiQuestion | None = None
    observed_at: float = 0.0


UNKNOWN = ServerCapabilities()


class CapabilityCache:
    def __init__(self, ttl_s: float = CAPABILITY_TTL_S, clock: Callable[[], float] = time.monotonic):
        self.ttl_s = ttl_s
        self.clock = clock
        self._lock = threading.Lock()
        self._caps: dict[tuple, ServerCapabilities] = {}

    @staticmethod
    def key(cfg: TransportConfig) -> tuple:
        return cfg.protocol, cfg.server

    def get(self, cfg: TransportConfig) -> ServerCapabilities:
        with self._lock:
            caps = self._caps.get(self.key(cfg))
        if caps is None or self.clock() - caps.observed_at > self.ttl_s:
            return UNKNOWN
        return caps

    def put(self, cfg: TransportConfig, caps: ServerCapabilities):
        with self._lock:
            self._caps[self.key(cfg)] = caps


def _short(cfg: TransportConfig, timeout: float) -> TransportConfig:
    return dataclasses.replace(cfg, udp_timeout=timeout, udp_attempts=1, timeout=timeout)


def _query(cfg: TransportConfig, questions: Sequence[Question], offer: bool,
           option_code: int) -> DnsMessage:
    edns = Edns(cfg.edns_payload,
                (partial_option(Role.CLIENT_OFFER, option_code),) if offer else ())
    q0 = questions[0]
    return make_query(q0.name, q0.qtype, query_id(cfg), edns=edns,
                      extra_questions=tuple(questions[1:]))


def probe_capabilities(upstream: TransportConfig, pools: Pools,
                       probe_names: Sequence[str] = ("example.com", "example.net"),
                       timeout: float = 1.0, option_code: int = PARTIAL_OPTION_CODE,
                       clock: Callable[[], float] = time.monotonic) -> ServerCapabilities:
    """Probe with a single-question offer and a plain two-question query."""
    cfg = _short(upstream, timeout)
    qs = [Question(canonical_name(n)) for n in probe_names[:2]]
    single = exchange(_query(cfg, qs[:1], True, option_code), cfg, pools)
    acked = (single.response is not None
             and partial_role(single.response, option_code) is Role.SERVER_ACK)
    multi = exchange(_query(cfg, qs, False, option_code), cfg, pools)
    if multi.response is None:
        behavior = MultiQuestion.IGNORES
    elif len(multi.response.questions) >= 2:
        behavior = MultiQuestion.FULL
    else:
        behavior = MultiQuestion.FIRST_ONLY
    return ServerCapabilities(Tri.YES if acked else Tri.NO, behavior, clock())


@dataclass(frozen=True)
class BatchItem:
    index: int                      # position in the caller's question list
    question: Question
    response: DnsMessage | None
    error: str | None
    elapsed_ms: float
    final: bool = False             # set on the item that completes the batch
    via_partial: bool = False

    @property
    def ok(self) -> bool:
        return self.error is None

    def rdata(self) -> tuple:
        if self.response is None:
            return ()
        return tuple(sorted((canonical_name(rr.name), rr.rtype, rr.rdata)
                            for rr in self.response.answers))


def _error_for(response: DnsMessage | None, outcome=None) -> str | None:
    if response is not None:
        return None if response.rcode == RCODE_NOERROR else f"DnsError:{response.rcode}"
    if outcome is None:
        return "NoAnswer"
    if outcome.result is Result.TIMEOUT:
        return "Timeout"
    return outcome.error or outcome.result.value


def _stream_dot(query: DnsMessage, cfg: TransportConfig, pools: Pools,
                deadline: float, option_code: int) -> Iterator[DnsMessage]:
    conn = pools.dot.acquire(cfg)
    healthy = False
    try:
        conn.send(encode_message(query))
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return
            conn.sock.settimeout(remaining)
            try:
                data = read_frame(conn.sock)
            except socket.timeout:
                return
            try:
                msg = decode_message(data)
            except WireError:
                continue
            if msg.id != query.id:
                continue
            yield msg
            if partial_role(msg, option_code) is Role.FINAL or len(msg.questions) > 1:
                healthy = True
                return
    except (OSError, EOFError):
        return
    finally:
        if healthy:
            pools.dot.release(conn)
        else:
            pools.dot.discard(conn)


def _stream_doh(query: DnsMessage, cfg: TransportConfig, pools: Pools,
                deadline: float) -> Iterator[DnsMessage]:
    timeout = max(0.01, deadline - time.monotonic())
    try:
        chunks = pools.doh.stream(cfg, encode_message(query), timeout)
        head = next(chunks, None)
        if head is None or head[0] != 200:
            return
        buf = bytearray()
        for chunk in chunks:
            buf += chunk
            if not head[1].startswith(STREAM_CONTENT_TYPE):
                continue
            while len(buf) >= 2:
                (n,) = struct.unpack_from("!H", buf)
                if len(buf) < 2 + n:
                    break
                raw, buf = bytes(buf[2:2 + n]), buf[2 + n:]
                try:
                    yield decode_message(raw)
                except WireError:
                    continue
        if not head[1].startswith(STREAM_CONTENT_TYPE) and buf:
            try:
                yield decode_message(bytes(buf))
            except WireError:
                pass
    except httpx.HTTPError:
        return


def _partial_stream(query, cfg, pools, timeout, option_code) -> Iterator[DnsMessage]:
    deadline = time.monotonic() + timeout
    if cfg.protocol is Protocol.DO53:
        for msg in stream_do53(query, cfg, timeout):
            yield msg
            if partial_role(msg, option_code) is Role.FINAL or len(msg.questions) > 1:
                return
    elif cfg.protocol is Protocol.DOT:
        yield from _stream_dot(query, cfg, pools, deadline, option_code)
    else:
        yield from _stream_doh(query, cfg, pools, deadline)


def _fan_out(indices, questions, cfg, pools, started_ns, via_partial=False):
    def one(i):
        q = questions[i]
        query = make_query(q.name, q.qtype, query_id(cfg), edns=Edns(cfg.edns_payload))
        return i, exchange(query, cfg, pools)

    with ThreadPoolExecutor(max_workers=max(1, len(indices))) as ex:
        for fut in as_completed([ex.submit(one, i) for i in indices]):
            i, outcome = fut.result()
            yield BatchItem(i, questions[i], outcome.response,
                            _error_for(outcome.response, outcome), Clock.ms(started_ns))


def resolve_batch(questions: Sequence[Question | str], upstream: TransportConfig,
                  caps: ServerCapabilities, pools: Pools, timeout: float | None = None,
                  option_code: int = PARTIAL_OPTION_CODE) -> Iterator[BatchItem]:
    """Yield one item per question in arrival order; the last one carries ``final``.

    With an acknowledged partial capability a single multi-question query is
    sent and answers are handed over as each partial message arrives. Any
    question the stream leaves unanswered falls back to its own query, so the
    stream always covers every question. Without the capability the questions
    are fanned out concurrently.
    """
    qs = [q if isinstance(q, Question) else Question(canonical_name(q)) for q in questions]
    if not qs:
        raise ValueError("resolve_batch needs at least one question")
    if len(qs) > MAX_BATCH:
        raise ValueError(f"at most {MAX_BATCH} questions per batch")
    timeout = upstream.timeout if timeout is None else timeout
    started = Clock.now_ns()
    total = len(qs)
    delivered = 0

    def mark(item: BatchItem) -> BatchItem:
        nonlocal delivered
        delivered += 1
        return dataclasses.replace(item, final=delivered == total)

    pending = list(range(total))
    use_partial = total > 1 and caps.supports_partial is Tri.YES
    if use_partial:
        query = _query(upstream, qs, True, option_code)
        for msg in _partial_stream(query, upstream, pools, timeout, option_code):
            for q in msg.questions:
                match = next((i for i in pending if qs[i].key() == q.key()), None)
                if match is None:
                    continue
                pending.remove(match)
                single = msg if len(msg.questions) == 1 else msg.replace(
                    questions=(q,),
                    answers=tuple(rr for rr in msg.answers if names_equal(rr.name, q.name)))
                yield mark(BatchItem(match, qs[match], single, _error_for(single),
                                     Clock.ms(started), via_partial=True))
            if not pending:
                return
    for item in _fan_out(pending, qs, _short(upstream, timeout) if use_partial else upstream,
                         pools, started):
        yield mark(item)


class PartialResolver:
    """Batches through resolve_batch, probing an upstream once per capability window."""

    def __init__(self, pools: Pools, cache: CapabilityCache | None = None,
                 option_code: int = PARTIAL_OPTION_CODE, probe_timeout: float = 1.0):
        self.pools = pools
        self.cache = cache or CapabilityCache()
        self.option_code = option_code
        self.probe_timeout = probe_timeout

    def capabilities(self, upstream: TransportConfig) -> ServerCapabilities:
        caps = self.cache.get(upstream)
        if caps.supports_partial is Tri.UNKNOWN:
            caps = probe_capabilities(upstream, self.pools, timeout=self.probe_timeout,
                                      option_code=self.option_code, clock=self.cache.clock)
            self.cache.put(upstream, caps)
        return caps

    def resolve(self, questions, upstream: TransportConfig, timeout: float | None = None):
        caps = UNKNOWN if len(questions) == 1 else self.capabilities(upstream)
        return resolve_batch(questions, upstream, caps, self.pools, timeout, self.option_code)
