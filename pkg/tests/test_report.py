import csv
import random
import re
import xml.etree.ElementTree as ET

import pytest

from dnslab.report import read_cdf_csv, render_report, write_cdf_csv
from dnslab.stats import cdf

SVG_NS = "{http://www.w3.org/2000/svg}"


def records(rng, configs=(("3g", "cf", "DoH"), ("3g", "cf", "Do53")), sites=40):
    out = []
    for profile, provider, protocol in configs:
        for i in range(sites):
            out.append({"website": f"s{i}.test", "repetition": 0, "profile": profile,
                        "provider": provider, "protocol": protocol, "mode": "sim",
                        "outcome_class": rng.choice(["Successful"] * 4 + ["DnsError"]),
                        "makespan_ms": rng.uniform(100, 5000), "response_time_ms": None})
    return out


def svg_polylines(path):
    """Vertices of each <g id="cdf-..."> path, parsed straight from the SVG XML."""
    tree = ET.parse(path)
    out = {}
    for g in tree.iter(f"{SVG_NS}g"):
        gid = g.get("id", "")
        if not gid.startswith("cdf-"):
            continue
        d = g.find(f"{SVG_NS}path").get("d")
        tokens = re.findall(r"[MLZz]|-?[\d.]+(?:e-?\d+)?", d)
        pts, nums = [], []
        for tok in tokens:
            if tok in "MLZz":
                continue
            nums.append(float(tok))
            if len(nums) == 2:
                pts.append(tuple(nums))
                nums = []
        out[gid] = pts
    return out


def test_file_cardinality(tmp_path):
    files = render_report(records(random.Random(0)), tmp_path)
    assert len(files.cdf_csv) == 2 and len(files.cdf_svg) == 2
    assert files.overlay_svg.exists()
    with open(files.diff_matrix) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 3 and all(len(r) == 3 for r in rows)
    assert rows[1][1] == "0.0" and rows[2][2] == "0.0"
    for p in files.all():
        assert p.exists()


def test_csv_round_trip(tmp_path):
    rng = random.Random(5)
    summary = cdf(rng.expovariate(1 / 40) for _ in range(777))
    assert read_cdf_csv(write_cdf_csv(summary, tmp_path / "x.csv")) == summary


def test_report_csv_matches_samples(tmp_path):
    recs = records(random.Random(1))
    files = render_report(recs, tmp_path)
    for label, path in files.cdf_csv.items():
        profile, provider, protocol = label.split("|")
        expected = sorted(r["makespan_ms"] for r in recs if r["protocol"] == protocol
                          and r["outcome_class"] == "Successful")
        assert list(read_cdf_csv(path).samples) == expected


def test_svg_curves_monotone(tmp_path):
    files = render_report(records(random.Random(2)), tmp_path)
    for label, svg in files.cdf_svg.items():
        lines = svg_polylines(svg)
        assert len(lines) == 1
        [pts] = lines.values()
        ys = [y for _, y in pts]
        xs = [x for x, _ in pts]
        # SVG y grows downward, so a rising CDF has non-increasing y
        assert all(b <= a + 1e-9 for a, b in zip(ys, ys[1:]))
        assert all(b >= a - 1e-9 for a, b in zip(xs, xs[1:]))
    assert len(svg_polylines(files.overlay_svg)) == 2


def test_failure_table_csv(tmp_path):
    recs = [{"website": f"s{i}", "profile": "default", "provider": "p", "protocol": "Do53",
             "outcome_class": "Successful" if i < 8 else "DnsError", "makespan_ms": 10.0}
            for i in range(10)]
    files = render_report(recs, tmp_path, plots=False)
    rows = list(csv.DictReader(open(files.failure_table)))
    assert rows == [{"profile": "default", "protocol": "Do53", "Successful": "80.00",
                     "PageLoadTimeout": "0.00", "DnsError": "20.00", "HarnessError": "0.00",
                     "OtherError": "0.00"}]
    assert files.cdf_svg == {} and files.overlay_svg is None


def test_bands(tmp_path):
    recs = []
    for i in range(11):
        for proto, v in (("DoT", 1000.0), ("Do53", 1101.0)):
            recs.append({"website": f"s{i}", "profile": "4g-lossy", "provider": "cf",
                         "protocol": proto, "outcome_class": "Successful", "makespan_ms": v})
    files = render_report(recs, tmp_path, plots=False)
    rows = {(r["config_a"], r["config_b"]): r for r in csv.DictReader(open(files.diff_bands))}
    row = rows[("4g-lossy|cf|DoT", "4g-lossy|cf|Do53")]
    assert float(row["median_diff_ms"]) == pytest.approx(-101)
    assert row["band"] == "AFaster" and row["pairs"] == "11"
