"""DNS message encoding and decoding (RFC 1035 wire format, EDNS(0) per RFC 6891).

Messages are emitted without name compression; the decoder follows
compression pointers, including pointers inside the RDATA of the record
types that carry domain names, so a decoded message can always be
re-encoded without dangling offsets.
"""

from __future__ import annotations

import dataclasses
import ipaddress
import struct
import warnings
from dataclasses import dataclass, field

MAX_MESSAGE = 65535
MAX_NAME = 255
MAX_LABEL = 63
DEFAULT_UDP_PAYLOAD = 4096

# record types / classes used across the package
TYPE_A = 1
TYPE_NS = 2
TYPE_CNAME = 5
TYPE_SOA = 6
TYPE_PTR = 12
TYPE_MX = 15
TYPE_TXT = 16
TYPE_AAAA = 28
TYPE_DNAME = 39
TYPE_OPT = 41
CLASS_IN = 1

TYPE_NAMES = {
    "A": TYPE_A, "NS": TYPE_NS, "CNAME": TYPE_CNAME, "SOA": TYPE_SOA,
    "PTR": TYPE_PTR, "MX": TYPE_MX, "TXT": TYPE_TXT, "AAAA": TYPE_AAAA,
    "DNAME": TYPE_DNAME, "OPT": TYPE_OPT,
}

RCODE_NOERROR = 0
RCODE_FORMERR = 1
RCODE_SERVFAIL = 2
RCODE_NXDOMAIN = 3

OPTION_ECS = 8

# header flag bits
FLAG_QR = 0x8000
FLAG_AA = 0x0400
FLAG_TC = 0x0200
FLAG_RD = 0x0100
FLAG_RA = 0x0080

# upper bound on label/pointer steps while reading one name
_MAX_NAME_STEPS = 128

_HEADER = struct.Struct("!HHHHHH")
_RR_FIXED = struct.Struct("!HHIH")


class WireError(ValueError):
    """Base class for encode/decode failures."""


class Truncated(WireError):
    pass


class BadPointer(WireError):
    pass


class NameTooLong(WireError):
    pass


class LabelTooLong(WireError):
    pass


class MessageTooLarge(WireError):
    pass


class TrailingGarbage(UserWarning):
    """Emitted (as a warning) when bytes follow the last declared record."""


def rtype_code(value: int | str) -> int:
    if isinstance(value, int):
        return value
    key = value.upper()
    if key in TYPE_NAMES:
        return TYPE_NAMES[key]
    if key.startswith("TYPE") and key[4:].isdigit():
        return int(key[4:])
    raise ValueError(f"unknown record type {value!r}")


def canonical_name(name: str) -> str:
    """Lowercased, without trailing dot; the root is ''."""
    name = name.rstrip(".") if name not in (".", "") else ""
    return name.lower()


def names_equal(a: str, b: str) -> bool:
    return canonical_name(a) == canonical_name(b)


@dataclass(frozen=True)
class DnsHeader:
    transaction_id: int = 0
    flags: int = 0
    qd_count: int = 0
    an_count: int = 0
    ns_count: int = 0
    ar_count: int = 0

    @property
    def qr(self) -> bool:
        return bool(self.flags & FLAG_QR)

    @property
    def opcode(self) -> int:
        return (self.flags >> 11) & 0xF

    @property
    def rd(self) -> bool:
        return bool(self.flags & FLAG_RD)

    @property
    def tc(self) -> bool:
        return bool(self.flags & FLAG_TC)

    @property
    def rcode(self) -> int:
        return self.flags & 0xF


@dataclass(frozen=True)
class Question:
    name: str
    qtype: int = TYPE_A
    qclass: int = CLASS_IN

    def key(self) -> tuple[str, int, int]:
        return (canonical_name(self.name), self.qtype, self.qclass)


@dataclass(frozen=True)
class ResourceRecord:
    name: str
    rtype: int
    rclass: int
    ttl: int
    rdata: bytes

    def text(self) -> str:
        """Presentation form of the RDATA for the common types."""
        if self.rtype == TYPE_A and len(self.rdata) == 4:
            return str(ipaddress.IPv4Address(self.rdata))
        if self.rtype == TYPE_AAAA and len(self.rdata) == 16:
            return str(ipaddress.IPv6Address(self.rdata))
        if self.rtype in (TYPE_CNAME, TYPE_NS, TYPE_PTR, TYPE_DNAME):
            return _read_name(self.rdata, 0)[0] + "."
        return self.rdata.hex()


@dataclass(frozen=True)
class EdnsOption:
    option_code: int
    payload: bytes = b""


@dataclass(frozen=True)
class Edns:
    udp_payload_size: int = DEFAULT_UDP_PAYLOAD
    options: tuple[EdnsOption, ...] = ()
    ext_rcode: int = 0
    version: int = 0
    flags: int = 0

    def option(self, code: int) -> EdnsOption | None:
        for opt in self.options:
            if opt.option_code == code:
                return opt
        return None


@dataclass(frozen=True)
class DnsMessage:
    header: DnsHeader = field(default_factory=DnsHeader)
    questions: tuple[Question, ...] = ()
    answers: tuple[ResourceRecord, ...] = ()
    authorities: tuple[ResourceRecord, ...] = ()
    additionals: tuple[ResourceRecord, ...] = ()
    edns: Edns | None = None

    @classmethod
    def create(cls, transaction_id=0, flags=0, questions=(), answers=(),
               authorities=(), additionals=(), edns=None) -> DnsMessage:
        """Build a message whose header counts match its sections."""
        questions, answers = tuple(questions), tuple(answers)
        authorities, additionals = tuple(authorities), tuple(additionals)
        header = DnsHeader(transaction_id, flags, len(questions), len(answers),
                           len(authorities), len(additionals) + (edns is not None))
        return cls(header, questions, answers, authorities, additionals, edns)

    def replace(self, **changes) -> DnsMessage:
        """Copy with changed sections; header counts are recomputed."""
        msg = dataclasses.replace(self, **changes)
        return msg.with_counts()

    def with_counts(self) -> DnsMessage:
        h = dataclasses.replace(
            self.header,
            qd_count=len(self.questions),
            an_count=len(self.answers),
            ns_count=len(self.authorities),
            ar_count=len(self.additionals) + (self.edns is not None),
        )
        return dataclasses.replace(self, header=h)

    @property
    def id(self) -> int:
        return self.header.transaction_id

    @property
    def rcode(self) -> int:
        base = self.header.rcode
        if self.edns is not None:
            base |= self.edns.ext_rcode << 4
        return base

    def records(self):
        return self.answers + self.authorities + self.additionals


def make_query(name: str, qtype: int | str = TYPE_A, transaction_id: int = 0,
               rd: bool = True, edns: Edns | None = Edns(),
               extra_questions=()) -> DnsMessage:
    questions = [Question(name, rtype_code(qtype), CLASS_IN)]
    questions.extend(extra_questions)
    return DnsMessage.create(transaction_id, FLAG_RD if rd else 0, questions, edns=edns)


def make_response(query: DnsMessage, answers=(), rcode: int = RCODE_NOERROR,
                  authorities=(), questions=None, edns: Edns | None = None,
                  aa: bool = False) -> DnsMessage:
    flags = FLAG_QR | FLAG_RA | (query.header.flags & (FLAG_RD | 0x7800)) | (rcode & 0xF)
    if aa:
        flags |= FLAG_AA
    if edns is None and query.edns is not None:
        edns = Edns(udp_payload_size=query.edns.udp_payload_size)
    return DnsMessage.create(
        query.id, flags,
        query.questions if questions is None else questions,
        answers, authorities, (), edns,
    )


# --------------------------------------------------------------- encoding

def _split_labels(name: str) -> list[bytes]:
    if name in ("", "."):
        return []
    if name.endswith(".") and not name.endswith("\\."):
        name = name[:-1]
    labels, cur, i = [], bytearray(), 0
    while i < len(name):
        ch = name[i]
        if ch == "\\" and i + 1 < len(name):
            nxt = name[i + 1:i + 4]
            if nxt.isdigit() and len(nxt) == 3:
                cur.append(int(nxt))
                i += 4
                continue
            cur.extend(name[i + 1].encode("latin-1"))
            i += 2
            continue
        if ch == ".":
            labels.append(bytes(cur))
            cur = bytearray()
        else:
            cur.extend(ch.encode("latin-1"))
        i += 1
    labels.append(bytes(cur))
    return labels


def encode_name(name: str) -> bytes:
    out = bytearray()
    for label in _split_labels(name):
        if not label:
            raise LabelTooLong(f"empty label in {name!r}")
        if len(label) > MAX_LABEL:
            raise LabelTooLong(f"label of {len(label)} bytes in {name!r}")
        out.append(len(label))
        out.extend(label)
    out.append(0)
    if len(out) > MAX_NAME:
        raise NameTooLong(f"{name!r} encodes to {len(out)} bytes")
    return bytes(out)


def _encode_rr(out: bytearray, rr: ResourceRecord) -> None:
    out += encode_name(rr.name)
    out += _RR_FIXED.pack(rr.rtype, rr.rclass, rr.ttl & 0xFFFFFFFF, len(rr.rdata))
    out += rr.rdata


def _encode_opt(out: bytearray, edns: Edns, rcode: int) -> None:
    rdata = bytearray()
    for opt in edns.options:
        rdata += struct.pack("!HH", opt.option_code, len(opt.payload)) + opt.payload
    ttl = ((edns.ext_rcode & 0xFF) << 24) | ((edns.version & 0xFF) << 16) | (edns.flags & 0xFFFF)
    out += b"\x00" + _RR_FIXED.pack(TYPE_OPT, edns.udp_payload_size, ttl, len(rdata)) + rdata


def encode_message(msg: DnsMessage) -> bytes:
    h = msg.header
    ar = len(msg.additionals) + (msg.edns is not None)
    expected = (len(msg.questions), len(msg.answers), len(msg.authorities), ar)
    if (h.qd_count, h.an_count, h.ns_count, h.ar_count) != expected:
        raise ValueError(f"header counts {h} do not match sections {expected}")
    out = bytearray(_HEADER.pack(h.transaction_id & 0xFFFF, h.flags & 0xFFFF, *expected))
    for q in msg.questions:
        out += encode_name(q.name) + struct.pack("!HH", q.qtype, q.qclass)
    for rr in msg.answers + msg.authorities + msg.additionals:
        _encode_rr(out, rr)
    if msg.edns is not None:
        _encode_opt(out, msg.edns, h.rcode)
    if len(out) > MAX_MESSAGE:
        raise MessageTooLarge(f"{len(out)} bytes")
    return bytes(out)


# --------------------------------------------------------------- decoding

def _label_text(raw: bytes) -> str:
    parts = []
    for b in raw:
        ch = chr(b)
        if ch in ".\\":
            parts.append("\\" + ch)
        elif 0x21 <= b <= 0x7E:
            parts.append(ch)
        else:
            parts.append(f"\\{b:03d}")
    return "".join(parts)


def _read_name(data: bytes, offset: int) -> tuple[str, int]:
    """Return (name, offset just past the name in the original stream).

    Pointers must point strictly backwards; together with the step bound
    this rules out loops.
    """
    labels: list[str] = []
    end = None
    pos = offset
    total = 1
    for _ in range(_MAX_NAME_STEPS):
        if pos >= len(data):
            raise Truncated("name runs past end of message")
        length = data[pos]
        kind = length & 0xC0
        if kind == 0xC0:
            if pos + 1 >= len(data):
                raise Truncated("truncated compression pointer")
            target = ((length & 0x3F) << 8) | data[pos + 1]
            if target >= pos:
                raise BadPointer(f"pointer at {pos} to {target} is not backwards")
            if end is None:
                end = pos + 2
            pos = target
            continue
        if kind:
            raise WireError(f"unsupported label type 0x{kind:02x} at {pos}")
        if length == 0:
            if end is None:
                end = pos + 1
            return ".".join(labels), end
        if pos + 1 + length > len(data):
            raise Truncated("label runs past end of message")
        total += length + 1
        if total > MAX_NAME:
            raise NameTooLong(f"decoded name exceeds {MAX_NAME} bytes")
        labels.append(_label_text(data[pos + 1:pos + 1 + length]))
        pos += 1 + length
    raise BadPointer("too many label/pointer steps")


def _expand_rdata(data: bytes, rtype: int, start: int, rdlen: int) -> bytes:
    end = start + rdlen
    try:
        if rtype in (TYPE_NS, TYPE_CNAME, TYPE_PTR, TYPE_DNAME):
            name, used = _read_name(data, start)
            if used != end:
                raise WireError("name rdata length mismatch")
            return encode_name(name)
        if rtype == TYPE_MX:
            pref = data[start:start + 2]
            name, used = _read_name(data, start + 2)
            if used != end or len(pref) < 2:
                raise WireError("MX rdata length mismatch")
            return pref + encode_name(name)
        if rtype == TYPE_SOA:
            mname, p = _read_name(data, start)
            rname, p = _read_name(data, p)
            if p + 20 != end:
                raise WireError("SOA rdata length mismatch")
            return encode_name(mname) + encode_name(rname) + data[p:end]
    except (NameTooLong, LabelTooLong) as exc:
        raise WireError(str(exc)) from exc
    return data[start:end]


def _read_rr(data: bytes, pos: int):
    name, pos = _read_name(data, pos)
    if pos + _RR_FIXED.size > len(data):
        raise Truncated("record header runs past end of message")
    rtype, rclass, ttl, rdlen = _RR_FIXED.unpack_from(data, pos)
    pos += _RR_FIXED.size
    if pos + rdlen > len(data):
        raise Truncated("rdata runs past end of message")
    return name, rtype, rclass, ttl, rdlen, pos


def _parse_options(rdata: bytes) -> tuple[EdnsOption, ...]:
    opts, pos = [], 0
    while pos < len(rdata):
        if pos + 4 > len(rdata):
            raise Truncated("truncated EDNS option header")
        code, length = struct.unpack_from("!HH", rdata, pos)
        pos += 4
        if pos + length > len(rdata):
            raise Truncated("truncated EDNS option payload")
        opts.append(EdnsOption(code, rdata[pos:pos + length]))
        pos += length
    return tuple(opts)


def decode_message(data: bytes) -> DnsMessage:
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise Truncated(f"{len(data)} bytes is shorter than a DNS header")
    tid, flags, qd, an, ns, ar = _HEADER.unpack_from(data, 0)
    pos = _HEADER.size
    questions = []
    for _ in range(qd):
        name, pos = _read_name(data, pos)
        if pos + 4 > len(data):
            raise Truncated("question runs past end of message")
        qtype, qclass = struct.unpack_from("!HH", data, pos)
        pos += 4
        questions.append(Question(name, qtype, qclass))
    sections: list[list[ResourceRecord]] = [[], [], []]
    edns = None
    for idx, count in enumerate((an, ns, ar)):
        for _ in range(count):
            name, rtype, rclass, ttl, rdlen, pos = _read_rr(data, pos)
            if rtype == TYPE_OPT and idx == 2:
                if edns is not None:
                    raise WireError("more than one OPT record")
                edns = Edns(
                    udp_payload_size=rclass,
                    options=_parse_options(data[pos:pos + rdlen]),
                    ext_rcode=ttl >> 24,
                    version=(ttl >> 16) & 0xFF,
                    flags=ttl & 0xFFFF,
                )
            else:
                rdata = _expand_rdata(data, rtype, pos, rdlen)
                sections[idx].append(ResourceRecord(name, rtype, rclass, ttl, rdata))
            pos += rdlen
    if pos != len(data):
        warnings.warn(f"{len(data) - pos} trailing bytes after message", TrailingGarbage,
                      stacklevel=2)
    header = DnsHeader(tid, flags, qd, an, ns, ar)
    return DnsMessage(header, tuple(questions), tuple(sections[0]), tuple(sections[1]),
                      tuple(sections[2]), edns)


# ----------------------------------------------------- wire-level rewrites

def rewrite_transaction_id(wire: bytes, new_id: int) -> bytes:
    if len(wire) < _HEADER.size:
        raise Truncated("need at least a full header to rewrite the ID")
    return struct.pack("!H", new_id & 0xFFFF) + bytes(wire[2:])


def transaction_id(wire: bytes) -> int:
    if len(wire) < 2:
        raise Truncated("no transaction ID")
    return struct.unpack_from("!H", wire, 0)[0]


def decrement_ttls(msg: DnsMessage, elapsed_s: int, safety_margin_s: int = 0) -> DnsMessage:
    """Age every record TTL, saturating at zero. The OPT pseudo-record is untouched."""
    cut = max(0, int(elapsed_s)) + max(0, int(safety_margin_s))

    def age(rrs):
        return tuple(dataclasses.replace(rr, ttl=max(0, rr.ttl - cut)) for rr in rrs)

    return dataclasses.replace(
        msg, answers=age(msg.answers), authorities=age(msg.authorities),
        additionals=age(msg.additionals),
    )


def ttl_offsets(wire: bytes) -> list[int]:
    """Byte offsets of the TTL field of every non-OPT record in ``wire``."""
    data = bytes(wire)
    if len(data) < _HEADER.size:
        raise Truncated("short message")
    _, _, qd, an, ns, ar = _HEADER.unpack_from(data, 0)
    pos = _HEADER.size
    for _ in range(qd):
        _, pos = _read_name(data, pos)
        pos += 4
    offsets = []
    for _ in range(an + ns + ar):
        _, pos = _read_name(data, pos)
        if pos + _RR_FIXED.size > len(data):
            raise Truncated("record header runs past end of message")
        rtype, _, _, rdlen = _RR_FIXED.unpack_from(data, pos)
        if rtype != TYPE_OPT:
            offsets.append(pos + 4)
        pos += _RR_FIXED.size + rdlen
    if pos > len(data):
        raise Truncated("rdata runs past end of message")
    return offsets


def decrement_wire_ttls(wire: bytes, seconds: int, offsets: list[int] | None = None) -> bytes:
    """Patch TTL fields in place; all other bytes (compression included) are kept."""
    out = bytearray(wire)
    for off in ttl_offsets(wire) if offsets is None else offsets:
        ttl = struct.unpack_from("!I", out, off)[0]
        struct.pack_into("!I", out, off, max(0, ttl - seconds))
    return bytes(out)


def min_answer_ttl(msg: DnsMessage) -> int | None:
    if not msg.answers:
        return None
    return min(rr.ttl for rr in msg.answers)


def soa_minimum(msg: DnsMessage) -> int | None:
    """Negative-caching TTL: min(SOA TTL, SOA MINIMUM) from the authority section."""
    for rr in msg.authorities:
        if rr.rtype == TYPE_SOA and len(rr.rdata) >= 20:
            minimum = struct.unpack_from("!I", rr.rdata, len(rr.rdata) - 4)[0]
            return min(rr.ttl, minimum)
    return None


def a_record(name: str, address: str, ttl: int = 300) -> ResourceRecord:
    ip = ipaddress.ip_address(address)
    rtype = TYPE_A if ip.version == 4 else TYPE_AAAA
    return ResourceRecord(name, rtype, CLASS_IN, ttl, ip.packed)


def rdata_from_text(rtype: int, text: str) -> bytes:
    """RDATA for fixture files: A/AAAA addresses, name-valued types, TXT, or hex."""
    if rtype in (TYPE_A, TYPE_AAAA):
        return ipaddress.ip_address(text).packed
    if rtype in (TYPE_NS, TYPE_CNAME, TYPE_PTR, TYPE_DNAME):
        return encode_name(text)
    if rtype == TYPE_MX:
        pref, _, host = text.partition(" ")
        return struct.pack("!H", int(pref)) + encode_name(host.strip())
    if rtype == TYPE_TXT:
        raw = text.strip('"').encode()[:255]
        return bytes([len(raw)]) + raw
    if rtype == TYPE_SOA:
        parts = text.split()
        if len(parts) != 7:
            raise ValueError("SOA needs mname rname serial refresh retry expire minimum")
        return (encode_name(parts[0]) + encode_name(parts[1])
                + struct.pack("!IIIII", *(int(p) for p in parts[2:])))
    return bytes.fromhex(text)
