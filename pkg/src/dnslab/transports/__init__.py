"""Do53, DoT and DoH client transports with per-query timing."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Iterable

from ..wire import DnsMessage
from .base import (Protocol, QueryOutcome, Result, TransportConfig, build_query,
                   parse_endpoint)
from .do53 import exchange_do53, resolve_do53
from .doh import DohPool, exchange_doh, resolve_doh
from .dot import ConnectionPool, exchange_dot, resolve_dot

__all__ = [
    "Protocol", "QueryOutcome", "Result", "TransportConfig", "ConnectionPool", "DohPool",
    "Pools", "exchange", "resolve", "resolve_do53", "resolve_dot", "resolve_doh",
    "measure_domains", "parse_endpoint", "build_query",
]


class Pools:
    """The connection pools a group of resolutions shares."""

    def __init__(self):
        self.dot = ConnectionPool()
        self.doh = DohPool()

    def close(self):
        self.dot.close()
        self.doh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def exchange(query: DnsMessage, cfg: TransportConfig, pools: Pools) -> QueryOutcome:
    if cfg.protocol is Protocol.DO53:
        return exchange_do53(query, cfg)
    if cfg.protocol is Protocol.DOT:
        return exchange_dot(query, cfg, pools.dot)
    return exchange_doh(query, cfg, pools.doh)


def resolve(domain: str, cfg: TransportConfig, pools: Pools, qtype: int | str = "A") -> QueryOutcome:
    return exchange(build_query(domain, cfg, qtype), cfg, pools)


def measure_domains(domains: Iterable[str], configs: list[TransportConfig],
                    workers: int = 8, pools: Pools | None = None,
                    qtype: int | str = "A") -> list[QueryOutcome]:
    """Measure every (domain, config) pair once with at most ``workers`` queries in flight.

    Outcomes come back domain-major in input order. Failures are recorded
    in the outcome and never stop the batch.
    """
    unique = list(dict.fromkeys(d.rstrip(".").lower() for d in domains))
    owned = pools is None
    pools = pools or Pools()
    jobs = [(d, cfg) for d in unique for cfg in configs]
    try:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
            futures = [ex.submit(resolve, d, cfg, pools, qtype) for d, cfg in jobs]
            return [f.result() for f in futures]
    finally:
        if owned:
            pools.close()
