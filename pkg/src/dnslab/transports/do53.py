"""Do53 over UDP only: fixed per-attempt timeout, no TCP fallback, no caching."""

from __future__ import annotations

import socket
import time
from typing import Callable, Iterator

from ..wire import DnsMessage, WireError, decode_message, encode_message
from .base import (Clock, Protocol, QueryOutcome, Result, TransportConfig, build_query,
                   outcome_from_response, response_matches)

SocketFactory = Callable[[int], "socket.socket"]


def _udp_socket(family: int) -> socket.socket:
    return socket.socket(family, socket.SOCK_DGRAM)


def _resolve_addr(host: str, port: int):
    info = socket.getaddrinfo(host, port, type=socket.SOCK_DGRAM)[0]
    return info[0], info[4]


def _same_source(src, addr) -> bool:
    return src[0] == addr[0] and src[1] == addr[1]


def exchange_do53(query: DnsMessage, cfg: TransportConfig,
                  socket_factory: SocketFactory | None = None,
                  accept: Callable[[DnsMessage, DnsMessage], bool] = response_matches) -> QueryOutcome:
    """Send ``query`` and wait for a matching response, retrying per attempt budget."""
    wire = encode_message(query)
    t_start = time.monotonic()
    common = dict(protocol=Protocol.DO53, provider=cfg.provider, t_start=t_start,
                  connection_setup=0.0)
    try:
        family, addr = _resolve_addr(*cfg.endpoint)
        sock = (socket_factory or _udp_socket)(family)
    except OSError as exc:
        return QueryOutcome(query.questions[0].name, result=Result.TRANSPORT_ERROR,
                            error=type(exc).__name__, response_time=0.0, **common)
    up = down = 0
    first_send = Clock.now_ns()
    try:
        for _ in range(cfg.udp_attempts):
            sock.sendto(wire, addr)
            up += len(wire)
            deadline = time.monotonic() + cfg.udp_timeout
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                sock.settimeout(remaining)
                try:
                    data, src = sock.recvfrom(65535)
                except socket.timeout:
                    break
                if not _same_source(src, addr):
                    continue
                try:
                    msg = decode_message(data)
                except WireError:
                    continue
                if not accept(query, msg):
                    continue
                down += len(data)
                return outcome_from_response(
                    query, msg, data, response_time=Clock.ms(first_send),
                    wire_size_up=up, wire_size_down=down, **common)
    except OSError as exc:
        return QueryOutcome(query.questions[0].name, result=Result.TRANSPORT_ERROR,
                            error=type(exc).__name__, response_time=Clock.ms(first_send),
                            wire_size_up=up, **common)
    finally:
        sock.close()
    return QueryOutcome(query.questions[0].name, result=Result.TIMEOUT,
                        response_time=Clock.ms(first_send), wire_size_up=up, **common)


def resolve_do53(domain: str, cfg: TransportConfig, qtype: int | str = "A",
                 socket_factory: SocketFactory | None = None) -> QueryOutcome:
    if cfg.protocol is not Protocol.DO53:
        raise ValueError(f"resolve_do53 given a {cfg.protocol.value} config")
    return exchange_do53(build_query(domain, cfg, qtype), cfg, socket_factory)


def stream_do53(query: DnsMessage, cfg: TransportConfig, timeout: float,
                socket_factory: SocketFactory | None = None) -> Iterator[DnsMessage]:
    """Send once and yield every response datagram carrying the query's ID until ``timeout``."""
    wire = encode_message(query)
    family, addr = _resolve_addr(*cfg.endpoint)
    sock = (socket_factory or _udp_socket)(family)
    try:
        sock.sendto(wire, addr)
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return
            sock.settimeout(remaining)
            try:
                data, src = sock.recvfrom(65535)
            except socket.timeout:
                return
            if not _same_source(src, addr):
                continue
            try:
                msg = decode_message(data)
            except WireError:
                continue
            if msg.id == query.id and msg.header.qr:
                yield msg
    finally:
        sock.close()
