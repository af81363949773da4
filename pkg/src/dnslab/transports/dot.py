"""DNS over TLS with pooled, idle-expiring connections and RFC 7766 framing."""

from __future__ import annotations

import socket
import ssl
import struct
import threading
import time
from dataclasses import dataclass, field

from ..wire import DnsMessage, WireError, decode_message, encode_message
from .base import (Clock, Protocol, QueryOutcome, Result, TransportConfig, build_query,
                   outcome_from_response, response_matches, tls_context)

_RESET_ERRORS = (ConnectionResetError, BrokenPipeError, ConnectionAbortedError, EOFError,
                 ssl.SSLEOFError, ssl.SSLZeroReturnError)


def frame(wire: bytes) -> bytes:
    return struct.pack("!H", len(wire)) + wire


def _recv_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise EOFError("connection closed by peer")
        buf += chunk
    return bytes(buf)


def read_frame(sock) -> bytes:
    (length,) = struct.unpack("!H", _recv_exact(sock, 2))
    return _recv_exact(sock, length)


@dataclass(eq=False)
class DotConnection:
    sock: ssl.SSLSocket
    key: tuple
    created: float
    last_used: float
    setup_ms: float
    queries: int = 0
    _reused: bool = field(default=False, repr=False)

    def send(self, wire: bytes) -> int:
        data = frame(wire)
        self.sock.sendall(data)
        return len(data)

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class ConnectionPool:
    """Idle TLS connections keyed by (host, port, verify).

    A connection is checked out for one exchange at a time and returned
    afterwards; one idle longer than the config's ``idle_timeout`` is
    closed instead of reused.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._idle: dict[tuple, list[DotConnection]] = {}
        self.opened = 0
        self._contexts: dict[tuple, ssl.SSLContext] = {}

    def _context(self, cfg: TransportConfig) -> ssl.SSLContext:
        key = (cfg.tls_verify, cfg.ca_file)
        with self._lock:
            if key not in self._contexts:
                self._contexts[key] = tls_context(cfg)
            return self._contexts[key]

    @staticmethod
    def key(cfg: TransportConfig) -> tuple:
        return cfg.endpoint + (cfg.tls_verify, cfg.tls_hostname)

    def acquire(self, cfg: TransportConfig, fresh: bool = False) -> DotConnection:
        key = self.key(cfg)
        now = time.monotonic()
        stale = []
        conn = None
        with self._lock:
            idle = self._idle.get(key, [])
            while idle and not fresh:
                candidate = idle.pop()
                if now - candidate.last_used > cfg.idle_timeout:
                    stale.append(candidate)
                    continue
                conn = candidate
                break
        for c in stale:
            c.close()
        if conn is not None:
            conn._reused = True
            return conn
        return self._connect(cfg, key)

    def _connect(self, cfg: TransportConfig, key: tuple) -> DotConnection:
        host, port = cfg.endpoint
        ctx = self._context(cfg)
        t0 = Clock.now_ns()
        raw = socket.create_connection((host, port), timeout=cfg.timeout)
        try:
            sock = ctx.wrap_socket(raw, server_hostname=cfg.tls_hostname or host)
        except BaseException:
            raw.close()
            raise
        setup = Clock.ms(t0)
        with self._lock:
            self.opened += 1
        now = time.monotonic()
        return DotConnection(sock, key, now, now, setup)

    def release(self, conn: DotConnection):
        conn.last_used = time.monotonic()
        with self._lock:
            self._idle.setdefault(conn.key, []).append(conn)

    def discard(self, conn: DotConnection):
        conn.close()

    def close(self):
        with self._lock:
            conns = [c for lst in self._idle.values() for c in lst]
            self._idle.clear()
        for c in conns:
            c.close()

    def idle_count(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._idle.values())


def exchange_dot(query: DnsMessage, cfg: TransportConfig, pool: ConnectionPool) -> QueryOutcome:
    wire = encode_message(query)
    t_start = time.monotonic()
    name = query.questions[0].name
    common = dict(protocol=Protocol.DOT, provider=cfg.provider, t_start=t_start)
    up = down = 0
    for attempt in range(2):
        try:
            conn = pool.acquire(cfg, fresh=attempt > 0)
        except ssl.SSLError as exc:
            return QueryOutcome(name, result=Result.TRANSPORT_ERROR, error=f"Tls:{exc.reason}",
                                response_time=0.0, connection_setup=0.0, **common)
        except socket.timeout:
            return QueryOutcome(name, result=Result.TIMEOUT, response_time=0.0,
                                connection_setup=0.0, **common)
        except OSError as exc:
            return QueryOutcome(name, result=Result.TRANSPORT_ERROR, error=type(exc).__name__,
                                response_time=0.0, connection_setup=0.0, **common)
        setup = 0.0 if conn._reused else conn.setup_ms
        sent = Clock.now_ns()
        deadline = time.monotonic() + cfg.timeout
        try:
            up += conn.send(wire)
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise socket.timeout()
                conn.sock.settimeout(remaining)
                data = read_frame(conn.sock)
                down += len(data) + 2
                try:
                    msg = decode_message(data)
                except WireError:
                    continue
                # responses may arrive out of order; match on ID and question
                if response_matches(query, msg):
                    break
        except socket.timeout:
            pool.discard(conn)
            return QueryOutcome(name, result=Result.TIMEOUT, response_time=Clock.ms(sent),
                                connection_setup=setup, wire_size_up=up, wire_size_down=down,
                                **common)
        except _RESET_ERRORS as exc:
            pool.discard(conn)
            if attempt == 0:
                continue
            return QueryOutcome(name, result=Result.TRANSPORT_ERROR,
                                error=f"ConnectionReset:{type(exc).__name__}",
                                response_time=Clock.ms(sent), connection_setup=setup,
                                wire_size_up=up, wire_size_down=down, **common)
        except OSError as exc:
            pool.discard(conn)
            return QueryOutcome(name, result=Result.TRANSPORT_ERROR, error=type(exc).__name__,
                                response_time=Clock.ms(sent), connection_setup=setup,
                                wire_size_up=up, wire_size_down=down, **common)
        conn.queries += 1
        pool.release(conn)
        return outcome_from_response(query, msg, data, response_time=Clock.ms(sent),
                                     connection_setup=setup, wire_size_up=up,
                                     wire_size_down=down, **common)
    raise AssertionError("unreachable")


def resolve_dot(domain: str, cfg: TransportConfig, pool: ConnectionPool,
                qtype: int | str = "A") -> QueryOutcome:
    if cfg.protocol is not Protocol.DOT:
        raise ValueError(f"resolve_dot given a {cfg.protocol.value} config")
    return exchange_dot(build_query(domain, cfg, qtype), cfg, pool)
