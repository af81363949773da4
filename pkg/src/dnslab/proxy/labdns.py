"""An authoritative-style lab responder over UDP, DoT and DoH (HTTP/2).

It answers from fixture records, emulates the multi-question handling seen
on public recursors, can stream partial responses in per-name delay order,
and exposes hit counters and fault knobs for tests.
"""

from __future__ import annotations

import asyncio
import collections
import enum
import logging
import socket
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import h2.config
import h2.connection
import h2.events
import h2.exceptions

from ..tlsutil import CertPair, make_self_signed, server_context
from ..wire import (RCODE_NOERROR, RCODE_NXDOMAIN, RCODE_SERVFAIL, TYPE_SOA, DnsMessage,
                    Question, ResourceRecord, WireError, canonical_name, decode_message,
                    encode_message, make_response, rdata_from_text, rtype_code)
from .options import PARTIAL_OPTION_CODE, Role, partial_option, partial_role, with_option

log = logging.getLogger(__name__)

DOH_PATH = "/dns-query"
CONTENT_TYPE = "application/dns-message"
STREAM_CONTENT_TYPE = "application/dns-message-stream"


class Behavior(str, enum.Enum):
    FULL = "full"
    FIRST_ONLY = "first-only"
    DROP_MULTI = "drop-multi"

    @classmethod
    def parse(cls, value: str | Behavior) -> Behavior:
        if isinstance(value, Behavior):
            return value
        norm = value.strip().lower().replace("_", "-")
        aliases = {"firstonly": "first-only", "dropmulti": "drop-multi"}
        return cls(aliases.get(norm, norm))


def load_fixtures(path: str | Path) -> list[ResourceRecord]:
    """Parse ``name type ttl rdata`` lines; ``#`` starts a comment."""
    records = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 3)
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 'name type ttl rdata'")
        name, rtype, ttl, rdata = parts
        code = rtype_code(rtype)
        records.append(ResourceRecord(canonical_name(name), code, 1, int(ttl),
                                      rdata_from_text(code, rdata)))
    return records


def load_delays(path: str | Path) -> dict[str, float]:
    """Parse ``name delay_ms`` lines into seconds per name."""
    delays = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(":", " ").split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'name delay_ms'")
        delays[canonical_name(parts[0])] = float(parts[1].removesuffix("ms")) / 1000.0
    return delays


@dataclass
class Faults:
    silent: bool = False                  # never answer anything
    silent_names: set = field(default_factory=set)
    servfail_names: set = field(default_factory=set)
    wrong_id: bool = False                # UDP answers carry a flipped transaction ID
    http_status: int | None = None        # DoH answers with this status instead
    reset_first: int = 0                  # DoT: drop this many connections after reading a query


class Zone:
    def __init__(self, records):
        self.records: dict[tuple[str, int], list[ResourceRecord]] = collections.defaultdict(list)
        self.names: set[str] = set()
        for rr in records:
            key = (canonical_name(rr.name), rr.rtype)
            self.records[key].append(rr)
            self.names.add(key[0])

    def soa_for(self, name: str) -> ResourceRecord | None:
        labels = canonical_name(name).split(".")
        for i in range(len(labels)):
            hit = self.records.get((".".join(labels[i:]), TYPE_SOA))
            if hit:
                return hit[0]
        return None

    def answer(self, q: Question) -> tuple[int, list, list]:
        name = canonical_name(q.name)
        answers = list(self.records.get((name, q.qtype), ()))
        if answers:
            return RCODE_NOERROR, answers, []
        soa = self.soa_for(name)
        rcode = RCODE_NOERROR if name in self.names else RCODE_NXDOMAIN
        return rcode, [], [soa] if soa else []


class LabServer:
    """Runs all three listeners on one asyncio loop in a daemon thread."""

    def __init__(self, records=(), behavior: Behavior | str = Behavior.FULL,
                 partial_support: bool = False, delays: dict[str, float] | None = None,
                 host: str = "127.0.0.1", udp_port: int = 0, dot_port: int = 0,
                 doh_port: int = 0, certs: CertPair | None = None,
                 option_code: int = PARTIAL_OPTION_CODE, faults: Faults | None = None):
        self.zone = Zone(records)
        self.behavior = Behavior.parse(behavior)
        self.partial_support = partial_support
        self.delays = {canonical_name(k): v for k, v in (delays or {}).items()}
        self.host = host
        self._ports = (udp_port, dot_port, doh_port)
        self.certs = certs
        self.option_code = option_code
        self.faults = faults or Faults()
        self._lock = threading.Lock()
        self.reset_counters()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None
        self._ready = threading.Event()
        self._stop: asyncio.Event | None = None
        self._error: BaseException | None = None
        self.udp_addr = self.dot_addr = None
        self.doh_url = ""

    # ------------------------------------------------------------ counters

    def reset_counters(self):
        with self._lock:
            self.hits = 0
            self.hits_by_name: collections.Counter = collections.Counter()
            self.connections: collections.Counter = collections.Counter()
            self.received: list[DnsMessage] = []
            # (method, path, content-type, body) of every DoH request
            self.doh_requests: list[tuple[str, str, str, bytes]] = []
            self._resets_done = 0

    def _count(self, msg: DnsMessage):
        with self._lock:
            self.hits += 1
            self.received.append(msg)
            for q in msg.questions:
                self.hits_by_name[canonical_name(q.name)] += 1

    # ------------------------------------------------------------ lifecycle

    @property
    def ca_file(self) -> str:
        return self.certs.cert_file

    def start(self) -> LabServer:
        if self.certs is None:
            self.certs = make_self_signed()
        self._thread = threading.Thread(target=self._run, name="labdns", daemon=True)
        self._thread.start()
        self._ready.wait(10)
        if self._error:
            raise self._error
        return self

    def stop(self):
        if self._loop and self._stop:
            self._loop.call_soon_threadsafe(self._stop.set)
        if self._thread:
            self._thread.join(5)

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

    def _run(self):
        self._loop = asyncio.new_event_loop()
        try:
            self._loop.run_until_complete(self._main())
        except BaseException as exc:     # surfaced to start()
            self._error = exc
            self._ready.set()
        finally:
            self._loop.close()

    async def _main(self):
        self._stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        udp_port, dot_port, doh_port = self._ports
        transport, _ = await loop.create_datagram_endpoint(
            lambda: _UdpProtocol(self), local_addr=(self.host, udp_port))
        self.udp_addr = transport.get_extra_info("sockname")[:2]
        dot = await asyncio.start_server(self._dot_client, self.host, dot_port,
                                         ssl=server_context(self.certs))
        self.dot_addr = dot.sockets[0].getsockname()[:2]
        doh = await asyncio.start_server(self._doh_client, self.host, doh_port,
                                         ssl=server_context(self.certs, alpn=["h2"]))
        port = doh.sockets[0].getsockname()[1]
        self.doh_url = f"https://{self.host}:{port}{DOH_PATH}"
        self._ready.set()
        await self._stop.wait()
        transport.close()
        for srv in (dot, doh):
            srv.close()
        tasks = [t for t in asyncio.all_tasks() if t is not asyncio.current_task()]
        for t in tasks:
            t.cancel()
        await asyncio.gather(*tasks, return_exceptions=True)

    # ------------------------------------------------------------ answering

    def _delay(self, q: Question) -> float:
        return self.delays.get(canonical_name(q.name), 0.0)

    def _single(self, query: DnsMessage, q: Question, edns=None) -> DnsMessage:
        if canonical_name(q.name) in self.faults.servfail_names:
            return make_response(query, rcode=RCODE_SERVFAIL, questions=(q,), edns=edns)
        rcode, answers, auth = self.zone.answer(q)
        return make_response(query, answers, rcode, auth, questions=(q,), edns=edns, aa=True)

    def _base_edns(self, query):
        if query.edns is None:
            return None
        return type(query.edns)(udp_payload_size=query.edns.udp_payload_size)

    def _is_silent(self, query: DnsMessage) -> bool:
        if self.faults.silent:
            return True
        return any(canonical_name(q.name) in self.faults.silent_names for q in query.questions)

    async def respond(self, query: DnsMessage, emit) -> None:
        """Produce the response message(s) for ``query`` and hand each to ``emit``."""
        self._count(query)
        if self._is_silent(query) or not query.questions:
            return
        qs = query.questions
        offered = (self.partial_support
                   and partial_role(query, self.option_code) is Role.CLIENT_OFFER)
        edns = self._base_edns(query)
        if len(qs) == 1:
            await asyncio.sleep(self._delay(qs[0]))
            if offered:
                edns = with_option(edns, partial_option(Role.SERVER_ACK, self.option_code))
            await emit(self._single(query, qs[0], edns))
            return
        if offered:
            order = sorted(range(len(qs)), key=lambda i: (self._delay(qs[i]), i))
            elapsed = 0.0
            for n, i in enumerate(order):
                d = self._delay(qs[i])
                await asyncio.sleep(max(0.0, d - elapsed))
                elapsed = max(elapsed, d)
                role = Role.FINAL if n == len(order) - 1 else Role.MORE_COMING
                await emit(self._single(query, qs[i],
                                        with_option(edns, partial_option(role, self.option_code))))
            return
        if self.behavior is Behavior.DROP_MULTI:
            return
        if self.behavior is Behavior.FIRST_ONLY:
            await asyncio.sleep(self._delay(qs[0]))
            await emit(self._single(query, qs[0], edns))
            return
        await asyncio.sleep(max(self._delay(q) for q in qs))
        answers, auth, rcodes = [], [], []
        for q in qs:
            rcode, a, au = self.zone.answer(q)
            answers += a
            auth += [r for r in au if r not in auth]
            rcodes.append(rcode)
        rcode = RCODE_NOERROR if RCODE_NOERROR in rcodes else rcodes[0]
        await emit(make_response(query, answers, rcode, auth, edns=edns, aa=True))

    # ------------------------------------------------------------ DoT

    async def _dot_client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        with self._lock:
            self.connections["dot"] += 1
            reset = self._resets_done < self.faults.reset_first
            if reset:
                self._resets_done += 1
        tasks = set()

        async def emit(msg):
            wire = encode_message(msg)
            writer.write(struct.pack("!H", len(wire)) + wire)
            await writer.drain()

        try:
            while True:
                head = await reader.readexactly(2)
                data = await reader.readexactly(struct.unpack("!H", head)[0])
                try:
                    query = decode_message(data)
                except WireError:
                    continue
                if reset:
                    self._count(query)
                    break
                # handled concurrently so responses can leave out of order
                t = asyncio.ensure_future(self.respond(query, emit))
                tasks.add(t)
                t.add_done_callback(tasks.discard)
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            if tasks and not reset:
                await asyncio.gather(*tasks, return_exceptions=True)
            if reset:
                sock = writer.get_extra_info("socket")
                if sock is not None:
                    # RST instead of FIN so the client sees a reset
                    sock.setsockopt(socket.SOL_SOCKET, socket.SO_LINGER, struct.pack("ii", 1, 0))
            writer.close()

    # ------------------------------------------------------------ DoH

    async def _doh_client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        with self._lock:
            self.connections["doh"] += 1
        conn = h2.connection.H2Connection(
            h2.config.H2Configuration(client_side=False, header_encoding="utf-8"))
        conn.initiate_connection()
        writer.write(conn.data_to_send())
        streams: dict[int, dict] = {}
        tasks = set()
        try:
            while True:
                data = await reader.read(65535)
                if not data:
                    break
                try:
                    events = conn.receive_data(data)
                except h2.exceptions.ProtocolError:
                    break
                for ev in events:
                    if isinstance(ev, h2.events.RequestReceived):
                        streams[ev.stream_id] = {"headers": dict(ev.headers), "body": bytearray()}
                    elif isinstance(ev, h2.events.DataReceived):
                        if ev.stream_id in streams:
                            streams[ev.stream_id]["body"] += ev.data
                        conn.acknowledge_received_data(ev.flow_controlled_length, ev.stream_id)
                    elif isinstance(ev, h2.events.StreamEnded):
                        req = streams.pop(ev.stream_id, None)
                        if req is not None:
                            t = asyncio.ensure_future(
                                self._doh_request(conn, writer, ev.stream_id, req))
                            tasks.add(t)
                            t.add_done_callback(tasks.discard)
                    elif isinstance(ev, h2.events.ConnectionTerminated):
                        raise ConnectionError
                writer.write(conn.data_to_send())
                await writer.drain()
        except ConnectionError:
            pass
        finally:
            for t in tasks:
                t.cancel()
            writer.close()

    async def _doh_request(self, conn, writer, stream_id: int, req: dict):
        headers = req["headers"]
        with self._lock:
            self.doh_requests.append((headers.get(":method", ""), headers.get(":path", ""),
                                      headers.get("content-type", ""), bytes(req["body"])))

        def send(status: int, body: bytes = b"", ctype: str = CONTENT_TYPE, end=True):
            try:
                conn.send_headers(stream_id, [(":status", str(status)), ("content-type", ctype),
                                              ("cache-control", "no-store")],
                                  end_stream=end and not body)
                if body:
                    conn.send_data(stream_id, body, end_stream=end)
                writer.write(conn.data_to_send())
            except (h2.exceptions.StreamClosedError, h2.exceptions.ProtocolError):
                pass

        if headers.get(":method") != "POST" or headers.get(":path", "").split("?")[0] != DOH_PATH:
            send(404 if headers.get(":method") == "POST" else 405)
            return
        try:
            query = decode_message(bytes(req["body"]))
        except WireError:
            send(400)
            return
        if self.faults.http_status is not None:
            self._count(query)
            send(self.faults.http_status, b"error")
            return
        offered = (self.partial_support and len(query.questions) > 1
                   and partial_role(query, self.option_code) is Role.CLIENT_OFFER)
        if not offered:
            out = []

            async def collect(msg):
                out.append(msg)

            await self.respond(query, collect)
            if out:
                send(200, encode_message(out[0]))
            return
        started = False

        async def stream(msg):
            nonlocal started
            wire = encode_message(msg)
            chunk = struct.pack("!H", len(wire)) + wire
            try:
                if not started:
                    conn.send_headers(stream_id, [(":status", "200"),
                                                  ("content-type", STREAM_CONTENT_TYPE)])
                    started = True
                final = partial_role(msg, self.option_code) is Role.FINAL
                conn.send_data(stream_id, chunk, end_stream=final)
                writer.write(conn.data_to_send())
                await writer.drain()
            except (h2.exceptions.StreamClosedError, h2.exceptions.ProtocolError):
                pass

        await self.respond(query, stream)


class _UdpProtocol(asyncio.DatagramProtocol):
    def __init__(self, server: LabServer):
        self.server = server
        self.transport = None

    def connection_made(self, transport):
        self.transport = transport

    def datagram_received(self, data, addr):
        try:
            query = decode_message(data)
        except WireError:
            return
        if query.header.qr:
            return

        async def emit(msg):
            wire = encode_message(msg)
            if self.server.faults.wrong_id:
                wire = struct.pack("!H", msg.id ^ 0xFFFF) + wire[2:]
            self.transport.sendto(wire, addr)

        asyncio.ensure_future(self.server.respond(query, emit))
