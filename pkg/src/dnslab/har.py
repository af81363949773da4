"""HAR ingestion: page-load timing, unique hostnames, and suspicious DNS timings.

HAR DNS timings are never used as measurements.  A first request for a
host reporting 0 ms (or no DNS timing at all) is reported as suspect,
since in a cold browser session that host must have been resolved by a
request the HAR does not show, e.g. one that was redirected.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable
from urllib.parse import urlsplit

SUPPORTED_VERSIONS = ("1.1", "1.2")


class HarError(ValueError):
    pass


class MalformedHar(HarError):
    pass


class UnsupportedVersion(HarError):
    pass


@dataclass(frozen=True)
class Suspect:
    entry_index: int
    domain: str
    reported_dns_ms: float | None
    reason: str


@dataclass
class HarSummary:
    page_url: str
    on_load_ms: float | None
    dom_content_loaded_ms: float | None
    unique_domains: list[str]
    entry_count: int
    suspect_dns_timings: list[Suspect] = field(default_factory=list)
    page_id: str = ""
    source: str = ""

    def to_record(self) -> dict:
        return {
            "page_url": self.page_url, "page_id": self.page_id, "source": self.source,
            "on_load_ms": self.on_load_ms,
            "dom_content_loaded_ms": self.dom_content_loaded_ms,
            "unique_domains": self.unique_domains, "entry_count": self.entry_count,
            "suspect_dns_timings": [[s.entry_index, s.reported_dns_ms]
                                    for s in self.suspect_dns_timings],
        }


def hostname(url: str) -> str | None:
    host = urlsplit(url).hostname     # lowercased, port and userinfo stripped
    return host.rstrip(".") if host else None


def _timing(value) -> float | None:
    if value is None:
        return None
    try:
        v = float(value)
    except (TypeError, ValueError):
        return None
    return None if v < 0 else v


def _load(document) -> dict:
    if isinstance(document, (bytes, str)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedHar(f"not JSON: {exc}") from exc
    if not isinstance(document, dict) or not isinstance(document.get("log"), dict):
        raise MalformedHar("missing top-level 'log' object")
    log = document["log"]
    version = str(log.get("version", ""))
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedVersion(f"HAR version {version!r} (accepted: 1.1, 1.2)")
    if not isinstance(log.get("pages"), list) or not log["pages"]:
        raise MalformedHar("missing or empty 'pages'")
    if not isinstance(log.get("entries"), list):
        raise MalformedHar("missing 'entries'")
    return log


def flag_suspect_dns(entries: Iterable[dict]) -> list[Suspect]:
    seen: set[str] = set()
    out = []
    for i, entry in enumerate(entries):
        host = hostname(entry.get("request", {}).get("url", ""))
        if host is None:
            continue
        if host in seen:
            continue
        seen.add(host)
        dns = _timing(entry.get("timings", {}).get("dns"))
        if dns is None:
            out.append(Suspect(i, host, None, "missing dns timing on first request"))
        elif dns == 0:
            out.append(Suspect(i, host, 0.0, "0 ms dns timing on first request"))
    return out


def _summaries(log: dict, source: str = "") -> list[HarSummary]:
    pages = log["pages"]
    entries = log["entries"]
    by_page: dict[str, list[tuple[int, dict]]] = {}
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "request" not in entry:
            raise MalformedHar(f"entry {i} has no request")
        by_page.setdefault(entry.get("pageref", ""), []).append((i, entry))
    single = len(pages) == 1
    out = []
    for page in pages:
        pid = page.get("id", "")
        indexed = [(i, e) for i, e in enumerate(entries)] if single else by_page.get(pid, [])
        domains: list[str] = []
        for _, e in indexed:
            host = hostname(e["request"].get("url", ""))
            if host and host not in domains:
                domains.append(host)
        suspects = [
            Suspect(indexed[s.entry_index][0], s.domain, s.reported_dns_ms, s.reason)
            for s in flag_suspect_dns(e for _, e in indexed)
        ]
        timings = page.get("pageTimings", {})
        out.append(HarSummary(
            page_url=page.get("title", "") or (indexed[0][1]["request"].get("url", "")
                                               if indexed else ""),
            on_load_ms=_timing(timings.get("onLoad")),
            dom_content_loaded_ms=_timing(timings.get("onContentLoad")),
            unique_domains=domains,
            entry_count=len(indexed),
            suspect_dns_timings=suspects,
            page_id=pid,
            source=source,
        ))
    return out


def parse_har(document, source: str = "") -> HarSummary:
    """Summary of the first page. Use :func:`parse_har_pages` for every page."""
    return _summaries(_load(document), source)[0]


def parse_har_pages(document, source: str = "") -> list[HarSummary]:
    return _summaries(_load(document), source)


def domains_for_measurement(summaries: Iterable[HarSummary]) -> list[str]:
    seen: dict[str, None] = {}
    for s in summaries:
        for d in s.unique_domains:
            seen.setdefault(d.lower(), None)
    return list(seen)


def load_har_files(paths: Iterable[str | Path]) -> list[HarSummary]:
    """Parse files and directories (``*.har`` found recursively)."""
    files: list[Path] = []
    for p in map(Path, paths):
        files.extend(sorted(p.rglob("*.har")) if p.is_dir() else [p])
    out = []
    for f in files:
        out.extend(parse_har_pages(f.read_text(encoding="utf-8"), source=str(f)))
    return out


def write_suspects_csv(summaries: Iterable[HarSummary], path: str | Path) -> int:
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["entry_index", "domain", "reported_dns_ms", "reason"])
        for s in summaries:
            for sus in s.suspect_dns_timings:
                w.writerow([sus.entry_index, sus.domain,
                            "" if sus.reported_dns_ms is None else sus.reported_dns_ms,
                            sus.reason])
                rows += 1
    return rows
