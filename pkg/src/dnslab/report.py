"""Report generation: CDF points, pairwise median differences, failure tables, SVG plots."""

from __future__ import annotations

import csv
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from . import plotting
from .stats import (OUTCOME_CLASSES, CdfSummary, NoCommonKeys, cdf, failure_table, paired_diff,
                    similarity_band)


@dataclass
class ReportFiles:
    cdf_csv: dict[str, Path]
    cdf_svg: dict[str, Path]
    overlay_svg: Path | None
    diff_matrix: Path
    diff_bands: Path
    failure_table: Path
    summary: Path

    def all(self) -> list[Path]:
        out = list(self.cdf_csv.values()) + list(self.cdf_svg.values())
        out += [self.diff_matrix, self.diff_bands, self.failure_table, self.summary]
        return out + ([self.overlay_svg] if self.overlay_svg else [])


def config_label(rec: dict) -> str:
    return f"{rec['profile']}|{rec['provider']}|{rec['protocol']}"


def slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label).strip("_")


def metric_of(rec: dict) -> float | None:
    # live records describe queries, simulated ones whole sessions
    if rec.get("mode") == "live" and rec.get("response_time_ms") is not None:
        return float(rec["response_time_ms"])
    value = rec.get("makespan_ms")
    if value is None:
        value = rec.get("response_time_ms")
    return None if value is None else float(value)


def group_samples(records: Iterable[dict], successful_only: bool = True):
    """{config label: {(repetition, website): value}} over records with a value."""
    groups: dict[str, dict] = defaultdict(dict)
    for rec in records:
        if successful_only and rec.get("outcome_class") != "Successful":
            continue
        value = metric_of(rec)
        if value is None:
            continue
        groups[config_label(rec)][(rec.get("repetition", 0), rec["website"])] = value
    return dict(sorted(groups.items()))


def write_cdf_csv(summary: CdfSummary, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_ms", "cum_frac"])
        for x, frac in summary.points():
            w.writerow([repr(x), repr(frac)])
    return path


def read_cdf_csv(path: str | Path) -> CdfSummary:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return cdf(float(r["x_ms"]) for r in rows)


def render_report(records: Iterable[dict], out_dir: str | Path, band_ms: float = 30.0,
                  plots: bool = True) -> ReportFiles:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = list(records)
    groups = group_samples(records)
    summaries = {label: cdf(v.values()) for label, v in groups.items()}

    cdf_csv, cdf_svg = {}, {}
    for label, summary in summaries.items():
        cdf_csv[label] = write_cdf_csv(summary, out / f"cdf_{slug(label)}.csv")
        if plots:
            cdf_svg[label] = plotting.plot_cdfs({label: summary}, out / f"cdf_{slug(label)}.svg",
                                                title=label)
    overlay = None
    if plots and summaries:
        overlay = plotting.plot_cdfs(summaries, out / "cdf_all.svg")

    labels = list(groups)
    matrix_path, bands_path = out / "diff_matrix.csv", out / "diff_bands.csv"
    with open(matrix_path, "w", newline="") as mf, open(bands_path, "w", newline="") as bf:
        mw, bw = csv.writer(mf), csv.writer(bf)
        mw.writerow(["config"] + labels)
        bw.writerow(["config_a", "config_b", "pairs", "median_diff_ms", "band"])
        for a in labels:
            row = [a]
            for b in labels:
                try:
                    d = paired_diff(groups[a], groups[b], a, b)
                except NoCommonKeys:
                    row.append("")
                    continue
                row.append(repr(d.median_diff))
                if a != b:
                    bw.writerow([a, b, len(d.diffs), repr(d.median_diff),
                                 similarity_band(d, band_ms).value])
            mw.writerow(row)

    table_path = out / "failure_table.csv"
    with open(table_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["profile", "protocol"] + list(OUTCOME_CLASSES))
        for (profile, protocol), pct in failure_table(records).items():
            w.writerow([profile, protocol] + [f"{pct[c]:.2f}" for c in OUTCOME_CLASSES])

    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "count", "mean_ms", "stddev_ms", "median_ms", "p95_ms"])
        for label, s in summaries.items():
            w.writerow([label, s.count, f"{s.mean:.3f}", f"{s.stddev:.3f}",
                        f"{s.median:.3f}", f"{s.quantile(0.95):.3f}"])
    return ReportFiles(cdf_csv, cdf_svg, overlay, matrix_path, bands_path, table_path,
                       summary_path)
