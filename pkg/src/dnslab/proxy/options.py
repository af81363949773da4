"""The EDNS option used to negotiate opportunistic partial responses.

The payload is a single role byte. The option code sits in the local/
experimental range and can be overridden everywhere it is used.
"""

from __future__ import annotations

import enum

from ..wire import DnsMessage, Edns, EdnsOption

PARTIAL_OPTION_CODE = 65001


class Role(enum.IntEnum):
    CLIENT_OFFER = 0
    SERVER_ACK = 1
    MORE_COMING = 2
    FINAL = 3


def partial_option(role: Role, code: int = PARTIAL_OPTION_CODE) -> EdnsOption:
    return EdnsOption(code, bytes([role]))


def partial_role(msg: DnsMessage, code: int = PARTIAL_OPTION_CODE) -> Role | None:
    if msg.edns is None:
        return None
    opt = msg.edns.option(code)
    if opt is None or len(opt.payload) != 1:
        return None
    try:
        return Role(opt.payload[0])
    except ValueError:
        return None


def with_option(edns: Edns | None, option: EdnsOption) -> Edns:
    edns = edns or Edns()
    kept = tuple(o for o in edns.options if o.option_code != option.option_code)
    return Edns(edns.udp_payload_size, kept + (option,), edns.ext_rcode, edns.version, edns.flags)


def without_option(edns: Edns | None, code: int) -> Edns | None:
    if edns is None:
        return None
    return Edns(edns.udp_payload_size, tuple(o for o in edns.options if o.option_code != code),
                edns.ext_rcode, edns.version, edns.flags)
