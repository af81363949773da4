"""Command-line entry point: ``dnslab <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

log = logging.getLogger("dnslab")


def _endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host:
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host.strip("[]"), int(port)


def _pool(text: str) -> int | None:
    if text.lower() in ("async", "none", "unbounded"):
        return None
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("pool must be >= 1 or 'async'")
    return n


# ------------------------------------------------------------------ commands

def cmd_measure(args) -> int:
    from .runner import load_config, plan_experiment, execute_plan

    cfg = load_config(args.config)
    plan = plan_experiment(cfg)

    def progress(i, n):
        if i % 50 == 0 or i == n:
            log.info("trial %d/%d", i, n)

    records = execute_plan(plan, cfg, args.mode, args.out, resume=args.resume,
                           progress=progress)
    log.info("wrote %d records to %s", len(records), args.out)
    return 0


def cmd_simulate(args) -> int:
    from . import simulator
    from .netem import get_profile
    from .report import write_cdf_csv
    from .stats import cdf

    profile = get_profile(args.profile, args.direction)
    wanted = ["do53", "dot", "doh"] if args.transport == "all" else [args.transport]
    pooled = not args.fresh
    models = {
        "do53": simulator.TransportModel.do53(timeout=args.udp_timeout, attempts=args.udp_attempts),
        "dot": simulator.TransportModel.dot(pooled=pooled),
        "doh": simulator.TransportModel.doh(pooled=pooled),
    }
    jsonl = open(args.out, "w") if args.out else None
    w = csv.writer(sys.stdout)
    w.writerow(["label", "median_ms", "mean_ms", "p95_ms", "failure_rate",
                "session_failure_rate", "queries_per_name", "direction"])
    for name in wanted:
        spec = simulator.SessionSpec(args.domains, args.pool, models[name], profile,
                                     args.rtt / 1000.0, queries_per_name=args.queries_per_name)
        result = simulator.sim_session(spec, args.trials, args.seed)
        if jsonl:
            for rec in session_records(spec, result, name):
                jsonl.write(json.dumps(rec) + "\n")
        row = simulator.summarize(spec, result).as_dict()
        w.writerow([row["label"], f"{row['median_ms']:.3f}", f"{row['mean_ms']:.3f}",
                    f"{row['p95_ms']:.3f}", f"{row['failure_rate']:.6f}",
                    f"{row['session_failure_rate']:.6f}", row["queries_per_name"],
                    row["direction"]])
        if args.cdf_dir:
            from .plotting import plot_cdfs
            from .report import slug

            out = Path(args.cdf_dir)
            out.mkdir(parents=True, exist_ok=True)
            summary = cdf(x * 1000 for x in result.samples)
            write_cdf_csv(summary, out / f"sim_{slug(spec.label)}.csv")
            plot_cdfs({spec.label: summary}, out / f"sim_{slug(spec.label)}.svg",
                      title=spec.label, xlabel="makespan (ms)")
    if jsonl:
        jsonl.close()
    return 0


def session_records(spec, result, transport: str):
    """Runner-schema records, one per simulated session."""
    from .runner import SCHEMA_VERSION, SessionSummary, classify_outcome
    from .transports import Protocol

    protocol = Protocol.parse(transport).value
    for trial, (makespan, failed) in enumerate(zip(result.samples, result.trial_failures)):
        yield {
            "schema_version": SCHEMA_VERSION, "website": f"session{trial}", "rank": trial,
            "protocol": protocol, "provider": "sim", "profile": spec.profile.name,
            "outcome_class": classify_outcome(SessionSummary(makespan, failed,
                                                             spec.domain_count)),
            "response_time_ms": None, "connection_setup_ms": None,
            "makespan_ms": round(makespan * 1000, 3), "wire_up": 0, "wire_down": 0,
            "error_detail": f"{failed} names failed" if failed else None, "ts": 0.0,
            "repetition": 0, "mode": "sim", "domains": spec.domain_count,
        }


def cmd_report(args) -> int:
    from .report import render_report
    from .runner import read_records

    records = []
    for path in args.inputs:
        records += read_records(path)
    files = render_report(records, args.out, band_ms=args.band_ms, plots=not args.no_plots)
    for p in files.all():
        print(p)
    return 0


def cmd_proxy(args) -> int:
    from .proxy.cache import WireCache
    from .proxy.server import ProxyServer, parse_upstream

    overrides = {}
    if args.insecure:
        overrides["tls_verify"] = False
    if args.ca_file:
        overrides["ca_file"] = args.ca_file
    upstream = parse_upstream(args.upstream, **overrides)
    cache = WireCache(args.cache_margin_s) if args.cache else None
    server = ProxyServer(args.listen, upstream, cache=cache, partial=args.partial,
                         strip_ecs=args.strip_ecs)
    server.start()
    log.info("proxy on %s:%d -> %s", *server.address, upstream.server)
    try:
        server._thread.join()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_labdns(args) -> int:
    from .proxy.labdns import LabServer, load_delays, load_fixtures
    from .tlsutil import CertPair

    certs = CertPair(args.cert, args.key) if args.cert and args.key else None
    lab = LabServer(load_fixtures(args.fixtures), args.behavior, args.partial,
                    load_delays(args.delays) if args.delays else None, host=args.host,
                    udp_port=args.udp_port, dot_port=args.dot_port, doh_port=args.doh_port,
                    certs=certs)
    lab.start()
    log.info("udp %s:%d  dot %s:%d  doh %s  ca %s", *lab.udp_addr, *lab.dot_addr, lab.doh_url,
             lab.ca_file)
    try:
        lab._thread.join()
    except KeyboardInterrupt:
        pass
    finally:
        lab.stop()
    return 0


def cmd_har(args) -> int:
    from .har import domains_for_measurement, load_har_files, write_suspects_csv

    summaries = load_har_files(args.paths)
    if args.domains:
        for d in domains_for_measurement(summaries):
            print(d)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["source", "page_url", "on_load_ms", "dom_content_loaded_ms",
                    "unique_domains", "entries", "suspect_dns"])
        for s in summaries:
            w.writerow([s.source, s.page_url, s.on_load_ms, s.dom_content_loaded_ms,
                        len(s.unique_domains), s.entry_count, len(s.suspect_dns_timings)])
    if args.suspects:
        n = write_suspects_csv(summaries, args.suspects)
        log.info("%d suspect DNS timings written to %s", n, args.suspects)
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnslab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("measure", help="run a campaign from a config file")
    m.add_argument("--config", required=True)
    m.add_argument("--mode", choices=["live", "sim"], default="sim")
    m.add_argument("--out", required=True)
    m.add_argument("--resume", action="store_true")
    m.set_defaults(func=cmd_measure)

    s = sub.add_parser("simulate", help="simulate page-load DNS sessions")
    s.add_argument("--profile", default="default")
    s.add_argument("--transport", choices=["do53", "dot", "doh", "all"], default="all")
    s.add_argument("--domains", type=int, default=20)
    s.add_argument("--pool", type=_pool, default=8, help="worker pool width or 'async'")
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rtt", type=float, default=50.0, help="base RTT in ms")
    s.add_argument("--direction", choices=["egress", "both"], default="both")
    s.add_argument("--queries-per-name", type=int, default=2)
    s.add_argument("--fresh", action="store_true", help="open a new connection per session")
    s.add_argument("--udp-timeout", type=float, default=5.0)
    s.add_argument("--udp-attempts", type=int, default=2)
    s.add_argument("--cdf-dir", help="also write makespan CDF CSV and SVG here")
    s.add_argument("--out", help="write one runner-schema JSONL record per session")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="CDFs, diff matrix and failure table from JSONL")
    r.add_argument("--in", dest="inputs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--band-ms", type=float, default=30.0)
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_report)

    x = sub.add_parser("proxy", help="local Do53 proxy with optional optimizations")
    x.add_argument("--listen", type=_endpoint, default=("127.0.0.1", 5353))
    x.add_argument("--upstream", required=True, help="do53://H:P, dot://H:P or doh://URL")
    x.add_argument("--cache", action="store_true")
    x.add_argument("--cache-margin-s", type=int, default=0)
    x.add_argument("--partial", action="store_true")
    x.add_argument("--strip-ecs", action="store_true")
    x.add_argument("--ca-file")
    x.add_argument("--insecure", action="store_true", help="skip TLS verification upstream")
    x.set_defaults(func=cmd_proxy)

    lab = sub.add_parser("labdns", help="lab responder over UDP, DoT and DoH")
    lab.add_argument("--fixtures", required=True)
    lab.add_argument("--behavior", choices=["full", "first-only", "drop-multi"], default="full")
    lab.add_argument("--partial", action="store_true")
    lab.add_argument("--delays")
    lab.add_argument("--host", default="127.0.0.1")
    lab.add_argument("--udp-port", type=int, default=5300)
    lab.add_argument("--dot-port", type=int, default=8530)
    lab.add_argument("--doh-port", type=int, default=8443)
    lab.add_argument("--cert")
    lab.add_argument("--key")
    lab.set_defaults(func=cmd_labdns)

    h = sub.add_parser("har", help="summarize HAR files")
    h.add_argument("paths", nargs="+")
    h.add_argument("--domains", action="store_true", help="print unique domains only")
    h.add_argument("--suspects", help="write suspect DNS timings CSV")
    h.set_defaults(func=cmd_har)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
