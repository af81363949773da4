"""Randomized measurement campaigns: plan, execute, classify, persist."""

from __future__ import annotations

import configparser
import csv
import enum
import json
import random
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import simulator
from .netem import get_profile, load_profiles
from .stats import OUTCOME_CLASSES
from .transports import Pools, Protocol, QueryOutcome, Result, TransportConfig, measure_domains

SCHEMA_VERSION = 1
PAGE_BUDGET_S = 30.0

SUCCESSFUL, PAGE_LOAD_TIMEOUT, DNS_ERROR, HARNESS_ERROR, OTHER_ERROR = OUTCOME_CLASSES


class MalformedList(ValueError):
    pass


class EmptySelection(ValueError):
    pass


class ConfigError(ValueError):
    pass


class Mode(str, enum.Enum):
    LIVE = "live"
    SIM = "sim"


def load_website_list(path: str | Path,
                      rank_range: tuple[int, int] | None = None) -> list[tuple[int, str]]:
    """Read a ``rank,domain`` CSV (header optional), filtered to an inclusive rank range."""
    entries = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            if lineno == 1 and row[0].strip().lower() == "rank":
                continue
            if len(row) < 2:
                raise MalformedList(f"{path}:{lineno}: expected 'rank,domain'")
            rank_text, domain = row[0].strip(), row[1].strip().rstrip(".").lower()
            try:
                rank = int(rank_text)
            except ValueError:
                raise MalformedList(f"{path}:{lineno}: rank {rank_text!r} is not an integer") from None
            if not domain or any(c.isspace() for c in domain) or any(x.strip() for x in row[2:]):
                raise MalformedList(f"{path}:{lineno}: bad domain field in {','.join(row)!r}")
            entries.append((rank, domain))
    if rank_range is not None:
        lo, hi = rank_range
        entries = [e for e in entries if lo <= e[0] <= hi]
    if not entries:
        raise EmptySelection(f"no websites selected from {path} (range {rank_range})")
    entries.sort(key=lambda e: e[0])
    return entries


def parse_rank_range(text: str | None) -> tuple[int, int] | None:
    if not text or not text.strip():
        return None
    lo, _, hi = text.replace(" ", "").partition("-")
    return int(lo), int(hi)


@dataclass(frozen=True)
class Provider:
    label: str
    do53: str | None = None
    dot: str | None = None
    doh: str | None = None
    tls_verify: bool = True
    ca_file: str | None = None

    def endpoint(self, protocol: Protocol) -> str | None:
        return {Protocol.DO53: self.do53, Protocol.DOT: self.dot, Protocol.DOH: self.doh}[protocol]

    @property
    def do53_only(self) -> bool:
        return bool(self.do53) and not self.dot and not self.doh

    def supports(self, protocol: Protocol) -> bool:
        return self.endpoint(protocol) is not None

    def transport(self, protocol: Protocol, **kw) -> TransportConfig:
        server = self.endpoint(protocol)
        if server is None:
            raise ConfigError(f"provider {self.label} has no {protocol.value} endpoint")
        return TransportConfig(protocol, server, tls_verify=self.tls_verify, ca_file=self.ca_file,
                               provider=self.label, **kw)


@dataclass(frozen=True)
class ExperimentConfig:
    websites: tuple[tuple[int, str], ...]
    providers: tuple[Provider, ...]
    protocols: tuple[Protocol, ...] = (Protocol.DO53, Protocol.DOT, Protocol.DOH)
    profile: str = "default"
    seed: int = 0
    repetitions: int = 1
    page_budget_s: float = PAGE_BUDGET_S
    workers: int = 8
    # simulated sessions
    base_rtt_s: float = 0.05
    domains_per_site: int = 20
    direction: str = "both"
    # optional per-website domain sets, e.g. from HAR files
    site_domains: dict = field(default_factory=dict, hash=False, compare=False)
    profiles_file: str | None = None

    def __post_init__(self):
        if not self.websites:
            raise ConfigError("websites must be nonempty")
        if not self.providers:
            raise ConfigError("at least one provider is required")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        object.__setattr__(self, "protocols", tuple(Protocol.parse(p) for p in self.protocols))
        for prov in self.providers:
            if prov.do53_only:
                continue
            missing = [p.value for p in self.protocols if not prov.supports(p)]
            if missing:
                raise ConfigError(f"provider {prov.label} lacks endpoints for {missing}"
                                  " and is not Do53-only")

    def network_profile(self):
        if self.profiles_file:
            profiles = load_profiles(self.profiles_file)
            if self.profile in profiles:
                return profiles[self.profile].with_direction(self.direction)
        return get_profile(self.profile, self.direction)

    def domains_for(self, website: str) -> list[str]:
        return list(self.site_domains.get(website) or [website])

    def describe(self) -> dict:
        return {
            "websites": len(self.websites), "providers": [asdict(p) for p in self.providers],
            "protocols": [p.value for p in self.protocols], "profile": self.profile,
            "seed": self.seed, "repetitions": self.repetitions,
            "page_budget_s": self.page_budget_s, "workers": self.workers,
            "base_rtt_s": self.base_rtt_s, "domains_per_site": self.domains_per_site,
            "direction": self.direction,
        }


def load_config(path: str | Path) -> ExperimentConfig:
    """INI config: an [experiment] section plus one [provider:LABEL] section per provider."""
    path = Path(path)
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigError(f"cannot read {path}")
    if "experiment" not in cp:
        raise ConfigError(f"{path}: missing [experiment] section")
    ex = cp["experiment"]

    def rel(value):
        p = Path(value)
        return str(p if p.is_absolute() else path.parent / p)

    websites = load_website_list(rel(ex["websites"]), parse_rank_range(ex.get("rank_range")))
    providers = []
    for name in cp.sections():
        if not name.startswith("provider:"):
            continue
        sec = cp[name]
        providers.append(Provider(
            name.split(":", 1)[1], sec.get("do53") or None, sec.get("dot") or None,
            sec.get("doh") or None, sec.getboolean("tls_verify", True),
            rel(sec["ca_file"]) if sec.get("ca_file") else None))
    site_domains = {}
    if ex.get("har_dir"):
        from .har import domains_for_measurement, hostname, load_har_files
        for summary in load_har_files([rel(ex["har_dir"])]):
            host = hostname(summary.page_url) or ""
            site = host.removeprefix("www.")
            site_domains.setdefault(site, [])
            for d in domains_for_measurement([summary]):
                if d not in site_domains[site]:
                    site_domains[site].append(d)
    return ExperimentConfig(
        websites=tuple(websites), providers=tuple(providers),
        protocols=tuple(p.strip() for p in ex.get("protocols", "Do53,DoT,DoH").split(",")
                        if p.strip()),
        profile=ex.get("profile", "default"), seed=ex.getint("seed", 0),
        repetitions=ex.getint("repetitions", 1),
        page_budget_s=ex.getfloat("page_budget_s", PAGE_BUDGET_S),
        workers=ex.getint("workers", 8), base_rtt_s=ex.getfloat("base_rtt_ms", 50.0) / 1000,
        domains_per_site=ex.getint("domains_per_site", 20),
        direction=ex.get("direction", "both"), site_domains=site_domains,
        profiles_file=rel(ex["profiles"]) if ex.get("profiles") else None,
    )


# ------------------------------------------------------------------ planning

@dataclass(frozen=True)
class Trial:
    repetition: int
    rank: int
    website: str
    protocol: Protocol
    provider: str

    @property
    def coords(self) -> tuple:
        return self.repetition, self.website, self.protocol.value, self.provider


@dataclass(frozen=True)
class ExperimentPlan:
    trials: tuple[Trial, ...]
    seed: int


def plan_experiment(cfg: ExperimentConfig) -> ExperimentPlan:
    rng = random.Random(cfg.seed)
    combos = [(proto, prov.label) for prov in cfg.providers for proto in cfg.protocols
              if prov.supports(proto)]
    trials = []
    for rep in range(cfg.repetitions):
        sites = list(cfg.websites)
        rng.shuffle(sites)
        for rank, site in sites:
            order = list(combos)
            rng.shuffle(order)
            trials.extend(Trial(rep, rank, site, proto, label) for proto, label in order)
    return ExperimentPlan(tuple(trials), cfg.seed)


# ------------------------------------------------------------------ execution

@dataclass(frozen=True)
class SessionSummary:
    makespan_s: float
    failed_names: int
    domain_count: int


@dataclass
class TrialRecord:
    trial: Trial
    profile: str
    outcome_class: str
    response_time_ms: float | None
    connection_setup_ms: float | None
    makespan_ms: float | None
    wire_up: int = 0
    wire_down: int = 0
    error_detail: str | None = None
    ts: float = 0.0
    mode: str = Mode.SIM.value
    domains: int = 1

    def to_json(self) -> dict:
        t = self.trial
        return {
            "schema_version": SCHEMA_VERSION, "website": t.website, "rank": t.rank,
            "protocol": t.protocol.value, "provider": t.provider, "profile": self.profile,
            "outcome_class": self.outcome_class, "response_time_ms": self.response_time_ms,
            "connection_setup_ms": self.connection_setup_ms, "makespan_ms": self.makespan_ms,
            "wire_up": self.wire_up, "wire_down": self.wire_down,
            "error_detail": self.error_detail, "ts": self.ts,
            "repetition": t.repetition, "mode": self.mode, "domains": self.domains,
        }


def classify_outcome(raw, page_budget_s: float = PAGE_BUDGET_S) -> str:
    """Map a raw trial result onto exactly one outcome class."""
    if isinstance(raw, BaseException):
        return HARNESS_ERROR
    if isinstance(raw, SessionSummary):
        if raw.failed_names:
            return DNS_ERROR
        return PAGE_LOAD_TIMEOUT if raw.makespan_s > page_budget_s else SUCCESSFUL
    outcomes = [raw] if isinstance(raw, QueryOutcome) else list(raw)
    if not outcomes:
        return HARNESS_ERROR
    if any(o.result in (Result.TIMEOUT, Result.DNS_ERROR) for o in outcomes):
        return DNS_ERROR
    if any(o.result is Result.TRANSPORT_ERROR for o in outcomes):
        return OTHER_ERROR
    total = max((o.t_start + o.response_time / 1000 for o in outcomes), default=0.0) - \
        min(o.t_start for o in outcomes)
    return PAGE_LOAD_TIMEOUT if total > page_budget_s else SUCCESSFUL


def _sim_model(protocol: Protocol) -> tuple[simulator.TransportModel, int | None]:
    # cold-start page loads: every session opens its own connection
    if protocol is Protocol.DO53:
        return simulator.TransportModel.do53(), 8
    if protocol is Protocol.DOT:
        return simulator.TransportModel.dot(pooled=False), 8
    return simulator.TransportModel.doh(pooled=False), None


def session_key(trial: Trial) -> int:
    # shared by every protocol/provider of one website visit: common random numbers
    return zlib.crc32(f"{trial.repetition}|{trial.website}".encode())


def run_simulated(trial: Trial, cfg: ExperimentConfig) -> TrialRecord:
    model, pool = _sim_model(trial.protocol)
    domains = len(cfg.site_domains.get(trial.website) or ()) or cfg.domains_per_site
    spec = simulator.SessionSpec(domains, pool, model, cfg.network_profile(), cfg.base_rtt_s)
    rng = simulator.trial_rng(cfg.seed, session_key(trial))
    makespan, failed = simulator.run_session(spec, rng)
    summary = SessionSummary(makespan, failed, domains)
    cls = classify_outcome(summary, cfg.page_budget_s)
    return TrialRecord(trial, cfg.profile, cls, None, None, round(makespan * 1000, 3),
                       error_detail=f"{failed} names failed" if failed else None,
                       ts=time.time(), mode=Mode.SIM.value, domains=domains)


def run_live(trial: Trial, cfg: ExperimentConfig,
             pools_factory: Callable[[], Pools] = Pools) -> TrialRecord:
    prov = next(p for p in cfg.providers if p.label == trial.provider)
    tcfg = prov.transport(trial.protocol)
    domains = cfg.domains_for(trial.website)
    began = time.monotonic()
    with pools_factory() as pools:              # fresh connections per page visit
        outcomes = measure_domains(domains, [tcfg], workers=cfg.workers, pools=pools)
    makespan = (time.monotonic() - began) * 1000
    cls = classify_outcome(outcomes, cfg.page_budget_s)
    first = outcomes[0]
    errors = [f"{o.domain}:{o.result.value}:{o.error or o.rcode}" for o in outcomes
              if not o.answered]
    return TrialRecord(
        trial, cfg.profile, cls, first.response_time, first.connection_setup,
        round(makespan, 3), sum(o.wire_size_up for o in outcomes),
        sum(o.wire_size_down for o in outcomes), "; ".join(errors) or None, time.time(),
        Mode.LIVE.value, len(outcomes))


def _header(cfg: ExperimentConfig, mode: Mode) -> dict:
    return {"schema_version": SCHEMA_VERSION, "type": "header", "mode": mode.value,
            "config": cfg.describe(), "created": time.time()}


def read_records(path: str | Path) -> list[dict]:
    """Trial records from a JSONL file, skipping header lines and a torn last line."""
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                continue
            if rec.get("type") == "header":
                continue
            out.append(rec)
    return out


def _done_coords(path: Path) -> set:
    if not path.exists():
        return set()
    return {(r.get("repetition", 0), r["website"], r["protocol"], r["provider"])
            for r in read_records(path)}


def execute_plan(plan: ExperimentPlan, cfg: ExperimentConfig, mode: Mode | str = Mode.SIM,
                 out: str | Path | None = None, resume: bool = False,
                 runner: Callable[[Trial, ExperimentConfig], TrialRecord] | None = None,
                 progress: Callable[[int, int], None] | None = None) -> list[TrialRecord]:
    """Run every trial once, appending each record to ``out`` as it completes."""
    mode = Mode(mode)
    runner = runner or (run_simulated if mode is Mode.SIM else run_live)
    out = Path(out) if out else None
    done = _done_coords(out) if (out and resume) else set()
    fh = None
    if out:
        fresh = not (resume and out.exists())
        if not fresh and out.stat().st_size:
            with open(out, "rb") as tail:
                tail.seek(-1, 2)
                torn = tail.read(1) != b"\n"
        else:
            torn = False
        fh = open(out, "w" if fresh else "a")
        if fresh:
            fh.write(json.dumps(_header(cfg, mode)) + "\n")
        elif torn:
            fh.write("\n")             # terminate a line cut short by a crash
    records = []
    try:
        for i, trial in enumerate(plan.trials):
            if trial.coords in done:
                continue
            try:
                rec = runner(trial, cfg)
            except Exception as exc:          # never abort the campaign
                rec = TrialRecord(trial, cfg.profile, HARNESS_ERROR, None, None, None,
                                  error_detail=f"{type(exc).__name__}: {exc}", ts=time.time(),
                                  mode=mode.value)
            records.append(rec)
            if fh:
                fh.write(json.dumps(rec.to_json()) + "\n")
                fh.flush()
            if progress:
                progress(i + 1, len(plan.trials))
    finally:
        if fh:
            fh.close()
    return records


def run_campaign(cfg: ExperimentConfig, mode: Mode | str, out: str | Path,
                 resume: bool = False) -> list[TrialRecord]:
    return execute_plan(plan_experiment(cfg), cfg, mode, out, resume)


def synthetic_config(websites: Sequence[tuple[int, str]] | int, protocols: Iterable = ("Do53",
                     "DoT", "DoH"), providers: int | Sequence[str] = 1, **kw) -> ExperimentConfig:
    """A config with placeholder endpoints, for simulation and planning."""
    if isinstance(websites, int):
        websites = [(i + 1, f"site{i + 1}.test") for i in range(websites)]
    labels = [f"p{i}" for i in range(providers)] if isinstance(providers, int) else list(providers)
    provs = tuple(Provider(lb, "127.0.0.1:53", "127.0.0.1:853", "https://127.0.0.1/dns-query")
                  for lb in labels)
    return ExperimentConfig(tuple(websites), provs, tuple(protocols), **kw)
