from __future__ import annotations

import enum
import secrets
import ssl
import time
from dataclasses import dataclass, field
from urllib.parse import urlsplit

from ..wire import DEFAULT_UDP_PAYLOAD, DnsMessage, Edns, make_query, rtype_code


class Protocol(str, enum.Enum):
    DO53 = "Do53"
    DOT = "DoT"
    DOH = "DoH"

    @classmethod
    def parse(cls, value: str | Protocol) -> Protocol:
        if isinstance(value, Protocol):
            return value
        for p in cls:
            if p.value.lower() == value.strip().lower():
                return p
        raise ValueError(f"unknown protocol {value!r}")


DEFAULT_PORTS = {Protocol.DO53: 53, Protocol.DOT: 853}


@dataclass(frozen=True)
class TransportConfig:
    protocol: Protocol
    server: str                     # host:port, or an https:// URI for DoH
    udp_timeout: float = 5.0
    udp_attempts: int = 2
    idle_timeout: float = 10.0
    fixed_transaction_id: int | None = None
    tls_verify: bool = True
    timeout: float = 5.0            # DoT/DoH per-query budget
    ca_file: str | None = None
    tls_hostname: str | None = None
    edns_payload: int = DEFAULT_UDP_PAYLOAD
    provider: str = ""

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol.parse(self.protocol))
        if self.protocol is Protocol.DOH:
            if not self.server.startswith("https://"):
                raise ValueError(f"DoH server must be an https:// URI, got {self.server!r}")
            if self.fixed_transaction_id is None:
                object.__setattr__(self, "fixed_transaction_id", 0)
        if self.udp_attempts < 1:
            raise ValueError("udp_attempts must be >= 1")

    @property
    def endpoint(self) -> tuple[str, int]:
        if self.protocol is Protocol.DOH:
            u = urlsplit(self.server)
            return u.hostname or "", u.port or 443
        return parse_endpoint(self.server, DEFAULT_PORTS[self.protocol])

    @property
    def label(self) -> str:
        return f"{self.provider or self.server}/{self.protocol.value}"


def parse_endpoint(text: str, default_port: int) -> tuple[str, int]:
    text = text.strip()
    if "://" in text:
        text = text.split("://", 1)[1]
    text = text.rstrip("/")
    if text.startswith("["):                      # [v6]:port
        host, _, rest = text[1:].partition("]")
        return host, int(rest[1:]) if rest.startswith(":") else default_port
    if text.count(":") == 1:
        host, port = text.split(":")
        return host, int(port)
    return text, default_port


class Result(str, enum.Enum):
    ANSWERED = "Answered"
    TIMEOUT = "Timeout"
    DNS_ERROR = "DnsError"
    TRANSPORT_ERROR = "TransportError"


@dataclass
class QueryOutcome:
    domain: str
    protocol: Protocol
    provider: str
    t_start: float                  # monotonic seconds
    response_time: float            # ms, request sent -> response decoded
    connection_setup: float         # ms, 0 when a pooled connection was reused
    result: Result
    rcode: int | None = None
    error: str | None = None        # TransportError kind
    wire_size_up: int = 0
    wire_size_down: int = 0
    response: DnsMessage | None = field(default=None, repr=False, compare=False)
    response_wire: bytes | None = field(default=None, repr=False, compare=False)

    @property
    def answered(self) -> bool:
        return self.result is Result.ANSWERED

    def to_record(self) -> dict:
        return {
            "domain": self.domain, "protocol": self.protocol.value, "provider": self.provider,
            "response_time_ms": self.response_time, "connection_setup_ms": self.connection_setup,
            "result": self.result.value, "rcode": self.rcode, "error": self.error,
            "wire_up": self.wire_size_up, "wire_down": self.wire_size_down,
        }


class Clock:
    """Monotonic nanosecond clock reporting milliseconds at microsecond precision."""

    @staticmethod
    def now_ns() -> int:
        return time.perf_counter_ns()

    @staticmethod
    def ms(start_ns: int, end_ns: int | None = None) -> float:
        end_ns = time.perf_counter_ns() if end_ns is None else end_ns
        return round((end_ns - start_ns) / 1e6, 3)


def query_id(cfg: TransportConfig) -> int:
    if cfg.fixed_transaction_id is not None:
        return cfg.fixed_transaction_id & 0xFFFF
    return secrets.randbelow(0x10000)


def build_query(domain: str, cfg: TransportConfig, qtype: int | str = "A") -> DnsMessage:
    # no client-subnet option is ever attached
    return make_query(domain, rtype_code(qtype), query_id(cfg), edns=Edns(cfg.edns_payload))


def tls_context(cfg: TransportConfig, alpn: list[str] | None = None) -> ssl.SSLContext:
    ctx = ssl.create_default_context(cafile=cfg.ca_file)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_2
    if not cfg.tls_verify:
        ctx.check_hostname = False
        ctx.verify_mode = ssl.CERT_NONE
    if alpn:
        ctx.set_alpn_protocols(alpn)
    return ctx


def response_matches(query: DnsMessage, response: DnsMessage) -> bool:
    if response.id != query.id or not response.header.qr:
        return False
    if not response.questions:
        return True                 # some servers omit the question on errors
    return response.questions[0].key() == query.questions[0].key()


def outcome_from_response(query: DnsMessage, response: DnsMessage, wire: bytes, **kw) -> QueryOutcome:
    rcode = response.rcode
    result = Result.ANSWERED if rcode == 0 else Result.DNS_ERROR
    return QueryOutcome(domain=query.questions[0].name, result=result, rcode=rcode,
                        response=response, response_wire=wire, **kw)
