"""Loopback Do53 proxy that forwards over Do53, DoT or DoH.

Optional behaviors: wire-format caching, partial-response batching for
multi-question client queries, and stripping of client-subnet options.
"""

from __future__ import annotations

import logging
import secrets
import socketserver
import threading
from dataclasses import dataclass
from typing import Iterator

from ..transports import Pools, Protocol, TransportConfig, exchange
from ..wire import (FLAG_TC, OPTION_ECS, RCODE_NOERROR, RCODE_SERVFAIL, DnsHeader,
                    DnsMessage, Edns, WireError, decode_message, encode_message, make_response,
                    rewrite_transaction_id)
from .cache import WireCache, cache_key
from .options import (PARTIAL_OPTION_CODE, Role, partial_option, partial_role, with_option,
                      without_option)
from .partial import CapabilityCache, PartialResolver

log = logging.getLogger(__name__)


class BindError(OSError):
    pass


def parse_upstream(text: str, **overrides) -> TransportConfig:
    """``do53://host:port``, ``dot://host:port`` or ``doh://https-url|host[:port][/path]``."""
    scheme, sep, rest = text.partition("://")
    if not sep:
        raise ValueError(f"upstream needs a scheme: {text!r}")
    proto = Protocol.parse(scheme)
    if proto is Protocol.DOH:
        if rest.startswith("https://"):
            url = rest
        else:
            url = "https://" + rest if "/" in rest else f"https://{rest}/dns-query"
        return TransportConfig(proto, url, **overrides)
    return TransportConfig(proto, rest, **overrides)


@dataclass
class ProxyStats:
    client_queries: int = 0
    upstream_queries: int = 0
    cache_hits: int = 0
    servfails: int = 0


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        data, sock = self.request
        for out in self.server.proxy.handle(data):
            sock.sendto(out, self.client_address)


class _UdpServer(socketserver.ThreadingUDPServer):
    daemon_threads = True
    allow_reuse_address = False     # UDP would let a second proxy share the port


class ProxyServer:
    def __init__(self, listen: tuple[str, int], upstream: TransportConfig,
                 cache: WireCache | None = None, partial: bool = False,
                 strip_ecs: bool = False, option_code: int = PARTIAL_OPTION_CODE,
                 pools: Pools | None = None):
        self.listen = listen
        self.upstream = upstream
        self.cache = cache
        self.partial = partial
        self.strip_ecs = strip_ecs
        self.option_code = option_code
        self.pools = pools or Pools()
        self.stats = ProxyStats()
        self._stats_lock = threading.Lock()
        self.resolver = PartialResolver(self.pools, CapabilityCache(), option_code)
        self._server: _UdpServer | None = None
        self._thread: threading.Thread | None = None

    # ------------------------------------------------------------ lifecycle

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> ProxyServer:
        try:
            self._server = _UdpServer(self.listen, _Handler)
        except OSError as exc:
            raise BindError(f"cannot bind {self.listen[0]}:{self.listen[1]}: {exc}") from exc
        self._server.proxy = self
        self._thread = threading.Thread(target=self._server.serve_forever, name="dns-proxy",
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self):
        if self._server:
            self._server.shutdown()
            self._server.server_close()
        self.pools.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def serve_forever(self):
        self.start()
        try:
            self._thread.join()
        except KeyboardInterrupt:
            self.stop()

    # ------------------------------------------------------------ handling

    def _bump(self, **fields):
        with self._stats_lock:
            for k, v in fields.items():
                setattr(self.stats, k, getattr(self.stats, k) + v)

    def _upstream_id(self, client_id: int) -> int:
        if self.upstream.fixed_transaction_id is not None:
            return self.upstream.fixed_transaction_id
        while True:
            new = secrets.randbelow(0x10000)
            if new != client_id:
                return new

    def _outgoing(self, query: DnsMessage) -> DnsMessage:
        edns = query.edns
        if self.strip_ecs:
            edns = without_option(edns, OPTION_ECS)
        edns = without_option(edns, self.option_code)
        return query.replace(header=DnsHeader(
            self._upstream_id(query.id), query.header.flags, 0, 0, 0, 0), edns=edns)

    def _fetch(self, query: DnsMessage) -> bytes | None:
        self._bump(upstream_queries=1)
        outcome = exchange(self._outgoing(query), self.upstream, self.pools)
        return outcome.response_wire

    def _servfail(self, query: DnsMessage) -> bytes:
        self._bump(servfails=1)
        return encode_message(make_response(query, rcode=RCODE_SERVFAIL))

    def handle(self, data: bytes) -> Iterator[bytes]:
        """Yield response datagrams for one client datagram as they become ready."""
        try:
            query = decode_message(data)
        except WireError:
            return
        if query.header.qr or not query.questions:
            return
        self._bump(client_queries=1)
        if len(query.questions) > 1:
            if self.partial:
                yield from self._batch(query)
                return
            # without batching, only the first question is forwarded
            query = query.replace(questions=query.questions[:1])
        yield self._limit(query, self._single(query))

    def _single(self, query: DnsMessage) -> bytes:
        if self.cache is not None:
            wire, hit = self.cache.get_or_fetch(cache_key(query), query.id,
                                                lambda: self._fetch(query))
            if hit:
                self._bump(cache_hits=1)
        else:
            wire = self._fetch(query)
            if wire is not None:
                wire = rewrite_transaction_id(wire, query.id)
        return self._servfail(query) if wire is None else wire

    def _batch(self, query: DnsMessage) -> Iterator[bytes]:
        streaming = partial_role(query, self.option_code) is Role.CLIENT_OFFER
        items = []
        for item in self.resolver.resolve(list(query.questions), self.upstream):
            items.append(item)
            if streaming:
                role = Role.FINAL if item.final else Role.MORE_COMING
                edns = with_option(Edns(), partial_option(role, self.option_code))
                if item.response is not None:
                    msg = make_response(query, item.response.answers, item.response.rcode,
                                        item.response.authorities, questions=(item.question,),
                                        edns=edns)
                else:
                    msg = make_response(query, rcode=RCODE_SERVFAIL, questions=(item.question,),
                                        edns=edns)
                yield encode_message(msg)
        if streaming:
            return
        answers = tuple(rr for it in sorted(items, key=lambda i: i.index)
                        if it.response is not None for rr in it.response.answers)
        rcode = RCODE_NOERROR if any(it.ok for it in items) else RCODE_SERVFAIL
        yield self._limit(query, encode_message(make_response(query, answers, rcode)))

    @staticmethod
    def _limit(query: DnsMessage, wire: bytes) -> bytes:
        limit = query.edns.udp_payload_size if query.edns else 512
        if len(wire) <= max(512, limit):
            return wire
        try:
            msg = decode_message(wire)
        except WireError:
            return wire
        short = make_response(query, rcode=msg.rcode)
        short = short.replace(header=DnsHeader(
            msg.id, short.header.flags | FLAG_TC, 0, 0, 0, 0))
        return encode_message(short)
