"""Seeded, in-process network-condition emulation.

Each packet is either dropped (independent Bernoulli trial) or delivered
after ``latency + U(-jitter, +jitter) + token-bucket queuing``.  Latency,
jitter and loss apply to outgoing packets only unless the profile's
direction is ``Direction.BOTH``; bandwidth caps always apply to their own
direction.
"""

from __future__ import annotations

import configparser
import enum
import random
import threading
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable

MTU = 1500


class Direction(str, enum.Enum):
    EGRESS = "egress"
    BOTH = "both"


class Flow(str, enum.Enum):
    """Which way a single packet travels, seen from the client."""
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class NetworkProfile:
    name: str
    latency: float = 0.0        # seconds
    jitter: float = 0.0         # seconds
    loss_rate: float = 0.0
    uplink_bps: float = 0.0     # 0 = unlimited
    downlink_bps: float = 0.0
    direction: Direction = Direction.EGRESS

    def __post_init__(self):
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError(f"loss_rate {self.loss_rate} outside [0, 1]")
        if self.latency < 0 or self.jitter < 0:
            raise ValueError("latency and jitter must be non-negative")
        if self.jitter > self.latency:
            raise ValueError(f"jitter {self.jitter} exceeds latency {self.latency}")
        if self.uplink_bps < 0 or self.downlink_bps < 0:
            raise ValueError("rates must be non-negative")
        object.__setattr__(self, "direction", Direction(self.direction))

    def with_direction(self, direction: Direction | str) -> NetworkProfile:
        return replace(self, direction=Direction(direction))

    def shapes(self, flow: Flow) -> bool:
        """Whether latency/jitter/loss apply to packets travelling ``flow``."""
        return flow is Flow.UP or self.direction is Direction.BOTH

    def rate(self, flow: Flow) -> float:
        return self.uplink_bps if flow is Flow.UP else self.downlink_bps

    def to_dict(self) -> dict:
        d = asdict(self)
        d["direction"] = self.direction.value
        return d


PROFILES: dict[str, NetworkProfile] = {
    "default": NetworkProfile("default"),
    "4g": NetworkProfile("4g", latency=0.0533, jitter=0.001, loss_rate=0.005,
                         uplink_bps=7.44e6, downlink_bps=22.1e6),
    "4g-lossy": NetworkProfile("4g-lossy", latency=0.0533, jitter=0.001, loss_rate=0.015,
                               uplink_bps=7.44e6, downlink_bps=22.1e6),
    "3g": NetworkProfile("3g", latency=0.150, jitter=0.008, loss_rate=0.021,
                         uplink_bps=1e6, downlink_bps=1e6),
}


def get_profile(name: str, direction: Direction | str | None = None) -> NetworkProfile:
    try:
        profile = PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown profile {name!r}; built-ins are {sorted(PROFILES)}") from None
    return profile if direction is None else profile.with_direction(direction)


_MS_KEYS = {"latency_ms": "latency", "jitter_ms": "jitter"}


def load_profiles(path: str | Path) -> dict[str, NetworkProfile]:
    """Read profiles from an INI file, one section per profile.

    Keys: latency_ms, jitter_ms, loss_rate (fraction) or loss_pct,
    uplink_bps, downlink_bps, direction.
    """
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    out = {}
    for section in cp.sections():
        kw: dict = {"name": section}
        for key, raw in cp[section].items():
            if key in _MS_KEYS:
                kw[_MS_KEYS[key]] = float(raw) / 1000.0
            elif key == "loss_pct":
                kw["loss_rate"] = float(raw) / 100.0
            elif key in ("loss_rate", "uplink_bps", "downlink_bps"):
                kw[key] = float(raw)
            elif key == "direction":
                kw[key] = Direction(raw.strip().lower())
            else:
                raise ValueError(f"[{section}] unknown key {key!r}")
        out[section] = NetworkProfile(**kw)
    return out


@dataclass(frozen=True)
class Deliver:
    after: float


@dataclass(frozen=True)
class Drop:
    pass


DROP = Drop()


class TokenBucket:
    """FIFO token bucket; a packet leaves once enough tokens have accrued."""

    def __init__(self, rate_bps: float, depth: int = MTU):
        self.rate = rate_bps / 8.0      # bytes per second
        self.depth = float(depth)
        self.tokens = float(depth)
        self.t_last = None

    def departure(self, now: float, size: int) -> float:
        if self.rate <= 0:
            return now
        if self.t_last is None:
            self.t_last = now
        start = max(now, self.t_last)
        tokens = min(self.depth, self.tokens + (start - self.t_last) * self.rate)
        if tokens >= size:
            depart = start
            tokens -= size
        else:
            depart = start + (size - tokens) / self.rate
            tokens = 0.0
        self.tokens, self.t_last = tokens, depart
        return depart


class Shaper:
    """Per-link shaping state: one token bucket per flow and one RNG."""

    def __init__(self, profile: NetworkProfile, rng: random.Random | int | None = None):
        self.profile = profile
        self.rng = rng if isinstance(rng, random.Random) else random.Random(rng)
        self.buckets = {flow: TokenBucket(profile.rate(flow)) for flow in Flow}

    def shape(self, size_bytes: int, flow: Flow, now: float = 0.0) -> Deliver | Drop:
        if size_bytes <= 0:
            raise ValueError("packet size must be positive")
        p = self.profile
        delay = 0.0
        if p.shapes(flow):
            # always consume both draws so decisions stay aligned across profiles
            lost = self.rng.random() < p.loss_rate
            wobble = self.rng.uniform(-p.jitter, p.jitter)
            if lost:
                return DROP
            delay = p.latency + wobble
        queued = self.buckets[flow].departure(now, size_bytes) - now
        return Deliver(delay + queued)


def shape_packet(profile: NetworkProfile, size_bytes: int, flow: Flow,
                 rng: random.Random, now: float = 0.0,
                 shaper: Shaper | None = None) -> Deliver | Drop:
    """One shaping decision. Pass ``shaper`` to keep bucket state across calls."""
    if shaper is None:
        shaper = Shaper(profile, rng)
    return shaper.shape(size_bytes, flow, now)


class ShapedEndpoint:
    """Datagram-socket wrapper that routes every packet through a :class:`Shaper`.

    ``inner`` needs ``sendto``/``recvfrom``; anything else is delegated.
    Every decision is appended to ``schedule`` as
    ``(flow, size, delay_or_None)`` so runs can be compared.
    """

    def __init__(self, inner, profile: NetworkProfile, seed: int,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.inner = inner
        self.shaper = Shaper(profile, seed)
        self.clock = clock
        self.sleep = sleep
        self.schedule: list[tuple[str, int, float | None]] = []
        self._lock = threading.Lock()
        self._timers: list[threading.Timer] = []

    def _decide(self, size: int, flow: Flow):
        with self._lock:
            decision = self.shaper.shape(size, flow, self.clock())
            after = decision.after if isinstance(decision, Deliver) else None
            self.schedule.append((flow.value, size, after))
        return after

    def sendto(self, data: bytes, addr) -> int:
        after = self._decide(len(data), Flow.UP)
        if after is None:
            return len(data)
        if after <= 0:
            return self.inner.sendto(data, addr)
        timer = threading.Timer(after, self.inner.sendto, args=(data, addr))
        timer.daemon = True
        self._timers.append(timer)
        timer.start()
        return len(data)

    def recvfrom(self, bufsize: int):
        while True:
            data, addr = self.inner.recvfrom(bufsize)
            after = self._decide(len(data), Flow.DOWN)
            if after is None:
                continue
            if after > 0:
                self.sleep(after)
            return data, addr

    def close(self):
        for timer in self._timers:
            timer.cancel()
        self.inner.close()

    def __getattr__(self, name):
        return getattr(self.inner, name)


def wrap_transport(inner_endpoint, profile: NetworkProfile, seed: int, **kwargs) -> ShapedEndpoint:
    return ShapedEndpoint(inner_endpoint, profile, seed, **kwargs)
