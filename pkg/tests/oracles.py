"""Brute-force reference statistics, independent of dnslab.stats."""

import math

CLASSES = ("Successful", "PageLoadTimeout", "DnsError", "HarnessError", "OtherError")

# Cloudflare rows by connectivity; columns Do53/DoT/DoH; class order as CLASSES
TABLE1 = {
    "default": {"Do53": (78.70, 7.48, 9.51, 1.69, 2.62), "DoT": (78.65, 7.47, 9.46, 1.74, 2.67),
                "DoH": (78.85, 7.21, 9.90, 1.78, 2.27)},
    "4g": {"Do53": (80.02, 7.86, 9.02, 1.84, 1.26), "DoT": (79.71, 7.75, 9.00, 1.67, 1.87),
           "DoH": (78.61, 7.22, 9.77, 1.86, 2.53)},
    "4g-lossy": {"Do53": (78.29, 8.24, 9.95, 1.99, 1.54), "DoT": (78.13, 8.16, 9.95, 1.96, 1.80),
                 "DoH": (76.95, 8.01, 10.76, 2.01, 2.28)},
    "3g": {"Do53": (28.10, 60.02, 9.83, 1.65, 0.40), "DoT": (27.87, 60.31, 9.76, 1.54, 0.51),
           "DoH": (20.06, 41.32, 37.15, 1.07, 0.40)},
}


def quantile(values, p):
    """Smallest sample x with at least p of the mass at or below it, by scanning."""
    n = len(values)
    for x in sorted(set(values)):
        if sum(1 for v in values if v <= x) / n >= p - 1e-12:
            return x
    return max(values)


def mean(values):
    return math.fsum(values) / len(values)


def stddev(values):
    if len(values) < 2:
        return 0.0
    m = mean(values)
    return math.sqrt(math.fsum((v - m) ** 2 for v in values) / (len(values) - 1))


def diffs(a, b):
    return {k: a[k] - b[k] for k in set(a) & set(b)}


def table(records):
    out = {}
    for rec in records:
        key = (rec["profile"], rec["protocol"])
        out.setdefault(key, []).append(rec["outcome_class"])
    return {k: {c: 100.0 * v.count(c) / len(v) for c in CLASSES} for k, v in out.items()}


def table1_counts(pcts, start=1000, stop=200_000):
    """Smallest total N with integer class counts that round back to every published percentage.

    Published rows are rounded, so some do not sum to exactly 100.00.
    """
    for n in range(start, stop):
        counts = [round(p * n / 100) for p in pcts]
        if sum(counts) == n and all(round(100 * c / n, 2) == p for c, p in zip(counts, pcts)):
            return counts
    raise ValueError(f"no synthetic set below {stop} for {pcts}")


def table1_records(profile, protocol):
    recs = []
    for cls, count in zip(CLASSES, table1_counts(TABLE1[profile][protocol])):
        recs += [{"profile": profile, "protocol": protocol, "outcome_class": cls}] * count
    return recs
