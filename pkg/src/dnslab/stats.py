"""Empirical CDFs, paired page-load differences and outcome tables."""

from __future__ import annotations

import bisect
import enum
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

OUTCOME_CLASSES = ("Successful", "PageLoadTimeout", "DnsError", "HarnessError", "OtherError")


class EmptyInput(ValueError):
    pass


class NoCommonKeys(ValueError):
    pass


def nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """Nearest-rank quantile: the smallest value with at least p of the mass at or below it."""
    if not sorted_values:
        raise EmptyInput("quantile of an empty sample")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"quantile {p} outside [0, 1]")
    n = len(sorted_values)
    rank = max(1, math.ceil(p * n - 1e-9))
    return sorted_values[min(rank, n) - 1]


@dataclass(frozen=True)
class CdfSummary:
    samples: tuple[float, ...]     # sorted
    mean: float
    stddev: float                  # sample standard deviation (n - 1)

    @property
    def count(self) -> int:
        return len(self.samples)

    def quantile(self, p: float) -> float:
        return nearest_rank(self.samples, p)

    @property
    def median(self) -> float:
        return self.quantile(0.5)

    def points(self) -> list[tuple[float, float]]:
        """(x, cumulative fraction) steps, one per sample."""
        n = len(self.samples)
        return [(x, (i + 1) / n) for i, x in enumerate(self.samples)]

    def fraction_at_or_below(self, x: float) -> float:
        return bisect.bisect_right(self.samples, x) / len(self.samples)


def cdf(samples: Iterable[float]) -> CdfSummary:
    values = sorted(float(v) for v in samples)
    if not values:
        raise EmptyInput("cdf of an empty sample")
    # Welford
    mean, m2 = 0.0, 0.0
    for k, x in enumerate(values, 1):
        delta = x - mean
        mean += delta / k
        m2 += delta * (x - mean)
    std = math.sqrt(m2 / (len(values) - 1)) if len(values) > 1 else 0.0
    return CdfSummary(tuple(values), mean, std)


@dataclass(frozen=True)
class PairwiseDiff:
    config_a: str
    config_b: str
    diffs: tuple[tuple[object, float], ...]
    median_diff: float

    def values(self) -> list[float]:
        return [d for _, d in self.diffs]


def paired_diff(a: Mapping[object, float], b: Mapping[object, float],
                config_a: str = "a", config_b: str = "b") -> PairwiseDiff:
    """Per-key a - b over the shared keys. A negative median means a is faster."""
    common = [k for k in a if k in b]
    if not common:
        raise NoCommonKeys(f"{config_a} and {config_b} share no keys")
    diffs = tuple((k, a[k] - b[k]) for k in common)
    median = nearest_rank(sorted(d for _, d in diffs), 0.5)
    return PairwiseDiff(config_a, config_b, diffs, median)


class Band(str, enum.Enum):
    A_FASTER = "AFaster"
    B_FASTER = "BFaster"
    SIMILAR = "Similar"


def similarity_band(diff: PairwiseDiff | float, band_ms: float = 30.0) -> Band:
    median = diff.median_diff if isinstance(diff, PairwiseDiff) else float(diff)
    if abs(median) <= band_ms:
        return Band.SIMILAR
    return Band.A_FASTER if median < 0 else Band.B_FASTER


def _get(record, key):
    return record[key] if isinstance(record, Mapping) else getattr(record, key)


def failure_table(records: Iterable) -> dict[tuple[str, str], dict[str, float]]:
    """Percent of records in each outcome class per (profile, protocol)."""
    counts: dict[tuple[str, str], Counter] = defaultdict(Counter)
    for rec in records:
        cls = _get(rec, "outcome_class")
        cls = getattr(cls, "value", cls)
        if cls not in OUTCOME_CLASSES:
            raise ValueError(f"unknown outcome class {cls!r}")
        protocol = _get(rec, "protocol")
        counts[(str(_get(rec, "profile")), str(getattr(protocol, "value", protocol)))][cls] += 1
    table = {}
    for key in sorted(counts):
        total = sum(counts[key].values())
        table[key] = {cls: 100.0 * counts[key][cls] / total for cls in OUTCOME_CLASSES}
    return table
