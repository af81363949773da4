"""DNS over HTTPS: POST application/dns-message on a reused, multiplexed HTTP/2 connection."""

from __future__ import annotations

import asyncio
import concurrent.futures
import queue
import threading
import time
from typing import Iterator

import httpx

from ..wire import DnsMessage, WireError, decode_message, encode_message
from .base import (Clock, Protocol, QueryOutcome, Result, TransportConfig, build_query,
                   outcome_from_response, response_matches, tls_context)

CONTENT_TYPE = "application/dns-message"
# length-prefixed sequence of messages, used for streamed partial answers
STREAM_CONTENT_TYPE = "application/dns-message-stream"


class DohPool:
    """HTTP/2 clients shared by all callers; concurrent queries multiplex on one connection.

    The clients run on a private event loop thread. Blocking callers hand
    requests to it, which keeps one slow stream from stalling reads for the
    others on the same connection.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._clients: dict[tuple, httpx.AsyncClient] = {}
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None

    def _ensure_loop(self) -> asyncio.AbstractEventLoop:
        with self._lock:
            if self._loop is None:
                self._loop = asyncio.new_event_loop()
                self._thread = threading.Thread(target=self._loop.run_forever,
                                                name="doh-pool", daemon=True)
                self._thread.start()
            return self._loop

    def run(self, coro, timeout: float | None = None):
        fut = asyncio.run_coroutine_threadsafe(coro, self._ensure_loop())
        return fut.result(timeout)

    def client(self, cfg: TransportConfig) -> httpx.AsyncClient:
        key = (cfg.tls_verify, cfg.ca_file, cfg.idle_timeout, cfg.timeout)
        with self._lock:
            c = self._clients.get(key)
            if c is None:
                c = httpx.AsyncClient(
                    http2=True, verify=tls_context(cfg), timeout=cfg.timeout,
                    limits=httpx.Limits(max_connections=None, keepalive_expiry=cfg.idle_timeout),
                )
                self._clients[key] = c
            return c

    def stream(self, cfg: TransportConfig, body: bytes, timeout: float) -> Iterator:
        """Yield the response status and content type, then raw body chunks as they arrive."""
        q: queue.Queue = queue.Queue()
        done = object()

        async def pump():
            try:
                async with self.client(cfg).stream("POST", cfg.server, content=body,
                                                   headers=post_headers(),
                                                   timeout=timeout) as resp:
                    q.put((resp.status_code, resp.headers.get("content-type", "")))
                    async for chunk in resp.aiter_raw():
                        q.put(chunk)
            except httpx.HTTPError as exc:
                q.put(exc)
            finally:
                q.put(done)

        fut = asyncio.run_coroutine_threadsafe(pump(), self._ensure_loop())
        deadline = time.monotonic() + timeout
        try:
            while True:
                try:
                    item = q.get(timeout=max(0.0, deadline - time.monotonic()))
                except queue.Empty:
                    return
                if item is done:
                    return
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            fut.cancel()

    def close(self):
        with self._lock:
            clients = list(self._clients.values())
            self._clients.clear()
            loop, thread = self._loop, self._thread
            self._loop = self._thread = None
        if loop is None:
            return

        async def shutdown():
            for c in clients:
                await c.aclose()

        try:
            asyncio.run_coroutine_threadsafe(shutdown(), loop).result(5)
        finally:
            loop.call_soon_threadsafe(loop.stop)
            thread.join(5)
            loop.close()


class _Trace:
    """Collects httpcore trace events for one request."""

    def __init__(self):
        self.connect_start: int | None = None
        self.tls_done: int | None = None
        self.headers_sent: int | None = None

    async def __call__(self, event: str, info: dict):
        now = Clock.now_ns()
        if event == "connection.connect_tcp.started":
            self.connect_start = now
        elif event == "connection.start_tls.complete":
            self.tls_done = now
        elif event == "http2.send_request_headers.started" and self.headers_sent is None:
            self.headers_sent = now

    @property
    def setup_ms(self) -> float:
        if self.connect_start is None or self.tls_done is None:
            return 0.0
        return Clock.ms(self.connect_start, self.tls_done)


def post_headers(content_type: str = CONTENT_TYPE) -> dict:
    return {"content-type": content_type, "accept": f"{CONTENT_TYPE}, {STREAM_CONTENT_TYPE}"}


async def _post(client: httpx.AsyncClient, url: str, body: bytes, trace: _Trace):
    resp = await client.post(url, content=body, headers=post_headers(),
                             extensions={"trace": trace})
    return resp, resp.content, Clock.now_ns()


def exchange_doh(query: DnsMessage, cfg: TransportConfig, pool: DohPool) -> QueryOutcome:
    body = encode_message(query)
    name = query.questions[0].name
    common = dict(protocol=Protocol.DOH, provider=cfg.provider, t_start=time.monotonic())
    trace = _Trace()
    began = Clock.now_ns()
    try:
        resp, data, finished = pool.run(_post(pool.client(cfg), cfg.server, body, trace),
                                        timeout=cfg.timeout + 1.0)
    except (httpx.TimeoutException, TimeoutError, concurrent.futures.TimeoutError):
        return QueryOutcome(name, result=Result.TIMEOUT, response_time=Clock.ms(began),
                            connection_setup=trace.setup_ms, wire_size_up=len(body), **common)
    except httpx.ConnectError as exc:
        kind = "Tls" if "SSL" in str(exc) or "certificate" in str(exc) else "Connect"
        return QueryOutcome(name, result=Result.TRANSPORT_ERROR, error=kind,
                            response_time=Clock.ms(began), connection_setup=trace.setup_ms,
                            **common)
    except httpx.HTTPError as exc:
        return QueryOutcome(name, result=Result.TRANSPORT_ERROR, error=f"Protocol:{type(exc).__name__}",
                            response_time=Clock.ms(began), connection_setup=trace.setup_ms,
                            **common)
    sent = trace.headers_sent or began
    elapsed = Clock.ms(sent, finished)
    setup = trace.setup_ms
    kw = dict(connection_setup=setup, wire_size_up=len(body), wire_size_down=len(data), **common)
    if resp.http_version != "HTTP/2":
        return QueryOutcome(name, result=Result.TRANSPORT_ERROR, error="NotHttp2",
                            response_time=elapsed, **kw)
    if resp.status_code != 200:
        return QueryOutcome(name, result=Result.TRANSPORT_ERROR,
                            error=f"HttpStatus:{resp.status_code}", response_time=elapsed, **kw)
    try:
        msg = decode_message(data)
    except WireError as exc:
        return QueryOutcome(name, result=Result.TRANSPORT_ERROR, error=f"BadMessage:{exc}",
                            response_time=elapsed, **kw)
    if not response_matches(query, msg):
        return QueryOutcome(name, result=Result.TRANSPORT_ERROR, error="MismatchedResponse",
                            response_time=elapsed, **kw)
    return outcome_from_response(query, msg, data, response_time=elapsed, **kw)


def resolve_doh(domain: str, cfg: TransportConfig, pool: DohPool,
                qtype: int | str = "A") -> QueryOutcome:
    if cfg.protocol is not Protocol.DOH:
        raise ValueError(f"resolve_doh given a {cfg.protocol.value} config")
    return exchange_doh(build_query(domain, cfg, qtype), cfg, pool)
