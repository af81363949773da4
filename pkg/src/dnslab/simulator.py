"""Discrete-event model of DNS query completion and page-load DNS makespan.

A session resolves ``domain_count`` names through a worker pool (bounded
for synchronous resolution, unbounded for asynchronous).  Each name issues
``queries_per_name`` queries at once, e.g. A and AAAA, and finishes when all
of them finish.  Every packet goes through a :class:`~dnslab.netem.Shaper`
that all queries of the session share, so bandwidth caps produce queuing
between concurrent queries.

UDP queries retry after a fixed timeout.  Connection-oriented queries
retransmit a lost segment after an RTO of twice the RTT estimate,
doubling per retry.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import random
from dataclasses import dataclass, field, replace

from .netem import Deliver, Direction, Flow, NetworkProfile, Shaper
from . import stats


class Kind(str, enum.Enum):
    UDP_QUERY = "udp"
    TCP_TLS_QUERY = "tcp-tls"
    HTTP2_QUERY = "http2"


@dataclass(frozen=True)
class FixedTimeout:
    timeout: float = 5.0
    attempts: int = 2


@dataclass(frozen=True)
class RtoBackoff:
    initial_factor: float = 2.0     # RTO = factor x RTT estimate
    multiplier: float = 2.0
    floor: float = 0.2
    max_retransmits: int = 6
    syn_rto: float = 1.0            # before any RTT sample exists

    def rto(self, rtt: float, retry: int) -> float:
        return max(self.floor, self.initial_factor * rtt) * self.multiplier ** retry


# per-query byte overheads on top of the DNS message itself
DOT_OVERHEAD = 31       # TLS record header/tag + 2-byte length prefix
DOH_OVERHEAD = 120      # HTTP/2 HEADERS+DATA frames with compressed headers
QUERY_BYTES = 45
RESPONSE_BYTES = 90
# browser DoH request timeout; a DoH query still unanswered after this fails
DOH_DEADLINE = 1.5

# (up, down) bytes for each handshake round trip
TCP_HANDSHAKE = (60, 60)
TLS_HANDSHAKE = (320, 3000)


@dataclass(frozen=True)
class TransportModel:
    kind: Kind
    handshake_rtts: int = 0
    per_query_overhead_bytes: int = 0
    retransmit: FixedTimeout | RtoBackoff = field(default_factory=RtoBackoff)
    query_bytes: int = QUERY_BYTES
    response_bytes: int = RESPONSE_BYTES
    query_deadline: float | None = None
    label: str = ""

    def __post_init__(self):
        udp = self.kind is Kind.UDP_QUERY
        if udp != isinstance(self.retransmit, FixedTimeout):
            raise ValueError("UDP queries use FixedTimeout, stream transports use RtoBackoff")
        if udp and self.handshake_rtts:
            raise ValueError("UDP has no handshake")
        if not self.label:
            object.__setattr__(self, "label", self.kind.value)

    @classmethod
    def do53(cls, timeout: float = 5.0, attempts: int = 2, **kw) -> TransportModel:
        kw.setdefault("label", "Do53")
        return cls(Kind.UDP_QUERY, 0, 0, FixedTimeout(timeout, attempts), **kw)

    @classmethod
    def dot(cls, pooled: bool = True, tls12: bool = False, **kw) -> TransportModel:
        kw.setdefault("label", "DoT")
        kw.setdefault("per_query_overhead_bytes", DOT_OVERHEAD)
        return cls(Kind.TCP_TLS_QUERY, 0 if pooled else 2 + tls12, **kw)

    @classmethod
    def doh(cls, pooled: bool = True, tls12: bool = False, deadline: float | None = DOH_DEADLINE,
            **kw) -> TransportModel:
        kw.setdefault("label", "DoH")
        kw.setdefault("per_query_overhead_bytes", DOH_OVERHEAD)
        return cls(Kind.HTTP2_QUERY, 0 if pooled else 2 + tls12, query_deadline=deadline, **kw)

    @property
    def fresh(self) -> bool:
        return self.handshake_rtts > 0


@dataclass(frozen=True)
class SessionSpec:
    domain_count: int
    worker_pool: int | None        # None = unbounded (asynchronous)
    transport: TransportModel
    profile: NetworkProfile
    base_rtt: float
    queries_per_name: int = 2
    label: str = ""

    def __post_init__(self):
        if self.domain_count < 1:
            raise ValueError("domain_count must be >= 1")
        if self.worker_pool is not None and self.worker_pool < 1:
            raise ValueError("worker_pool must be >= 1 or None")
        if self.base_rtt <= 0:
            raise ValueError("base_rtt must be positive")
        if not self.label:
            pool = "async" if self.worker_pool is None else f"pool{self.worker_pool}"
            object.__setattr__(self, "label",
                               f"{self.transport.label}/{self.profile.name}/{pool}")


@dataclass(frozen=True)
class Failure:
    at: float
    reason: str


@dataclass
class SimResult:
    samples: list[float]
    failures: int
    seed: int
    trial_failures: list[int] = field(default_factory=list)


def rtt_estimate(profile: NetworkProfile, base_rtt: float) -> float:
    shaped = 2 if profile.direction is Direction.BOTH else 1
    return base_rtt + shaped * profile.latency


def trial_rng(seed: int, trial: int) -> random.Random:
    return random.Random((int(seed) & 0xFFFFFFFFFFFFFFFF) * 1_000_003 + trial)


class _Loop:
    def __init__(self):
        self.now = 0.0
        self._heap = []
        self._seq = itertools.count()

    def at(self, t, fn, *args):
        heapq.heappush(self._heap, (t, next(self._seq), fn, args))

    def run(self):
        while self._heap:
            t, _, fn, args = heapq.heappop(self._heap)
            self.now = t
            fn(*args)


class _Session:
    """One simulated page load; all queries share one link and one connection."""

    def __init__(self, spec: SessionSpec, rng: random.Random):
        self.spec = spec
        self.model = spec.transport
        self.loop = _Loop()
        self.shaper = Shaper(spec.profile, rng)
        self.half = spec.base_rtt / 2.0
        self.rtt = rtt_estimate(spec.profile, spec.base_rtt)
        self.conn_ready: float | None = None if self.model.fresh else 0.0
        self.conn_failed: float | None = None
        self.conn_waiters: list = []
        self.name_done: list[float] = []
        self.name_failed = 0

    # -- packet helpers ---------------------------------------------------
    def _transmit(self, size, flow):
        """Shape one packet now; returns arrival time at the far end or None."""
        d = self.shaper.shape(size, flow, self.loop.now)
        if isinstance(d, Deliver):
            return self.loop.now + self.half + d.after
        return None

    def _reliable(self, size, flow, rto_of, on_arrive, on_fail, retry=0):
        """Send with retransmission until delivered or the retry budget is spent."""
        policy = self.model.retransmit
        arrival = self._transmit(size, flow)
        if arrival is not None:
            self.loop.at(arrival, on_arrive)
            return
        wait = rto_of(retry)
        if retry >= policy.max_retransmits:
            self.loop.at(self.loop.now + wait, on_fail, "retransmissions exhausted")
            return
        self.loop.at(self.loop.now + wait, self._reliable, size, flow, rto_of,
                     on_arrive, on_fail, retry + 1)

    # -- connection establishment ----------------------------------------
    def _start_connection(self):
        m = self.model
        pol = m.retransmit
        steps = [TCP_HANDSHAKE] + [TLS_HANDSHAKE] * (m.handshake_rtts - 1)

        def step(i):
            if i == len(steps):
                self._conn_up()
                return
            up, down = steps[i]
            # the SYN goes out before any RTT sample exists
            up_rto = (lambda r: pol.syn_rto * pol.multiplier ** r) if i == 0 else \
                (lambda r: pol.rto(self.rtt, r))
            down_rto = lambda r: pol.rto(self.rtt, r)
            self._reliable(
                up, Flow.UP, up_rto,
                lambda: self._reliable(down, Flow.DOWN, down_rto,
                                       lambda: step(i + 1), self._conn_down),
                self._conn_down,
            )

        step(0)

    def _conn_up(self):
        self.conn_ready = self.loop.now
        waiters, self.conn_waiters = self.conn_waiters, []
        for fn in waiters:
            fn()

    def _conn_down(self, reason):
        self.conn_failed = self.loop.now
        waiters, self.conn_waiters = self.conn_waiters, []
        for fn in waiters:
            fn()

    # -- queries ----------------------------------------------------------
    def _query(self, on_done):
        """Issue one query now; ``on_done(ok)`` fires exactly once."""
        m = self.model
        state = {"done": False}

        def finish(ok, *_):
            if not state["done"]:
                state["done"] = True
                on_done(ok)

        if m.query_deadline is not None:
            self.loop.at(self.loop.now + m.query_deadline, finish, False)
        if m.kind is Kind.UDP_QUERY:
            self._udp_attempt(0, state, finish)
        elif self.conn_ready is not None:
            self._stream_query(state, finish)
        elif self.conn_failed is not None:
            finish(False)
        else:
            self.conn_waiters.append(
                lambda: finish(False) if self.conn_failed is not None
                else self._stream_query(state, finish))

    def _udp_attempt(self, attempt, state, finish):
        m = self.model
        pol = m.retransmit
        arrival = self._transmit(m.query_bytes, Flow.UP)
        if arrival is not None:
            def server():
                back = self._transmit(m.response_bytes, Flow.DOWN)
                if back is not None:
                    self.loop.at(back, finish, True)
            self.loop.at(arrival, server)

        def expire():
            if state["done"]:
                return
            if attempt + 1 < pol.attempts:
                self._udp_attempt(attempt + 1, state, finish)
            else:
                finish(False)

        self.loop.at(self.loop.now + pol.timeout, expire)

    def _stream_query(self, state, finish):
        if state["done"]:
            return
        m = self.model
        pol = m.retransmit
        rto = lambda r: pol.rto(self.rtt, r)
        self._reliable(
            m.query_bytes + m.per_query_overhead_bytes, Flow.UP, rto,
            lambda: self._reliable(m.response_bytes + m.per_query_overhead_bytes, Flow.DOWN,
                                   rto, lambda: finish(True), lambda r: finish(False)),
            lambda r: finish(False),
        )

    # -- names and the worker pool ---------------------------------------
    def run(self) -> tuple[float, int]:
        spec = self.spec
        pending = list(range(spec.domain_count))
        width = spec.domain_count if spec.worker_pool is None else spec.worker_pool

        def start_name():
            if not pending:
                return
            pending.pop()
            left = [spec.queries_per_name]
            failed = [False]

            def one_done(ok):
                failed[0] |= not ok
                left[0] -= 1
                if left[0] == 0:
                    self.name_done.append(self.loop.now)
                    self.name_failed += failed[0]
                    start_name()

            for _ in range(spec.queries_per_name):
                self._query(one_done)

        if self.model.fresh:
            self.loop.at(0.0, self._start_connection)
        for _ in range(min(width, spec.domain_count)):
            self.loop.at(0.0, start_name)
        self.loop.run()
        return max(self.name_done), self.name_failed


def run_session(spec: SessionSpec, rng: random.Random) -> tuple[float, int]:
    """One session: (makespan seconds, names that failed)."""
    return _Session(spec, rng).run()


def sim_query(model: TransportModel, profile: NetworkProfile, base_rtt: float,
              rng: random.Random) -> float | Failure:
    """Virtual time for one query to complete, or a Failure carrying its failure time."""
    spec = SessionSpec(1, 1, model, profile, base_rtt, queries_per_name=1)
    makespan, failed = _Session(spec, rng).run()
    return Failure(makespan, "attempt budget exhausted") if failed else makespan


def sim_session(spec: SessionSpec, trials: int, seed: int) -> SimResult:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    samples, per_trial = [], []
    for trial in range(trials):
        makespan, failed = _Session(spec, trial_rng(seed, trial)).run()
        samples.append(makespan)
        per_trial.append(failed)
    return SimResult(samples, sum(per_trial), seed, per_trial)


@dataclass(frozen=True)
class ComparisonRow:
    label: str
    median: float
    mean: float
    p95: float
    failure_rate: float          # failed names / names attempted
    session_failure_rate: float  # trials with at least one failed name
    queries_per_name: int
    direction: str

    def as_dict(self) -> dict:
        return {
            "label": self.label, "median_ms": self.median * 1000, "mean_ms": self.mean * 1000,
            "p95_ms": self.p95 * 1000, "failure_rate": self.failure_rate,
            "session_failure_rate": self.session_failure_rate,
            "queries_per_name": self.queries_per_name, "direction": self.direction,
        }


def summarize(spec: SessionSpec, result: SimResult) -> ComparisonRow:
    summary = stats.cdf(result.samples)
    n = len(result.samples)
    return ComparisonRow(
        spec.label, summary.quantile(0.5), summary.mean, summary.quantile(0.95),
        result.failures / (n * spec.domain_count),
        sum(1 for f in result.trial_failures if f) / n,
        spec.queries_per_name, spec.profile.direction.value,
    )


def compare_transports(specs: list[SessionSpec], trials: int, seed: int) -> list[ComparisonRow]:
    if len({s.domain_count for s in specs}) > 1:
        raise ValueError("specs must share domain_count")
    return [summarize(spec, sim_session(spec, trials, seed)) for spec in specs]


def with_profile(spec: SessionSpec, profile: NetworkProfile) -> SessionSpec:
    return replace(spec, profile=profile, label="")

