import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dnslab.stats import (Band, EmptyInput, NoCommonKeys, cdf, failure_table, paired_diff,
                          similarity_band)


def test_cdf_small():
    s = cdf([3, 1, 2])
    assert s.median == 2 and s.mean == 2 and s.count == 3
    assert s.samples == (1.0, 2.0, 3.0)
    assert s.stddev == pytest.approx(1.0)


def test_cdf_uniform_median():
    rng = random.Random(2024)
    s = cdf(rng.random() for _ in range(1000))
    assert abs(s.quantile(0.5) - 0.5) <= 0.05


def test_cdf_empty():
    with pytest.raises(EmptyInput):
        cdf([])


def test_paired_identity_and_shift():
    a = {f"site{i}": float(i * 7 % 13) for i in range(20)}
    assert paired_diff(a, a).median_diff == 0
    assert all(d == 0 for d in paired_diff(a, a).values())
    b = {k: v - 100 for k, v in a.items()}
    assert paired_diff(a, b).median_diff == pytest.approx(100)


def test_paired_no_common_keys():
    with pytest.raises(NoCommonKeys):
        paired_diff({"a": 1}, {"b": 2})


def test_paired_half_overlap():
    rng = random.Random(1)
    keys = [f"k{i}" for i in range(200)]
    a = {k: rng.random() for k in keys[:150]}
    b = {k: rng.random() for k in keys[50:]}
    diff = paired_diff(a, b)
    assert len(diff.diffs) == len(set(a) & set(b)) == 100
    assert {k for k, _ in diff.diffs} == set(a) & set(b)


@pytest.mark.parametrize("median,band", [(-12, Band.SIMILAR), (-101, Band.A_FASTER),
                                         (1350, Band.B_FASTER), (30, Band.SIMILAR),
                                         (-30.0001, Band.A_FASTER)])
def test_similarity_band(median, band):
    assert similarity_band(median) is band


def test_band_override():
    assert similarity_band(-12, band_ms=10) is Band.A_FASTER


def test_failure_table_arithmetic():
    recs = [{"profile": "default", "protocol": "DoH", "outcome_class": "Successful"}] * 8 + \
        [{"profile": "default", "protocol": "DoH", "outcome_class": "DnsError"}] * 2
    row = failure_table(recs)[("default", "DoH")]
    assert row["Successful"] == 80.0 and row["DnsError"] == 20.0
    assert row["PageLoadTimeout"] == 0.0


def test_failure_table_rejects_unknown_class():
    with pytest.raises(ValueError):
        failure_table([{"profile": "x", "protocol": "Do53", "outcome_class": "Weird"}])


@pytest.mark.parametrize("profile", list(oracles.TABLE1))
@pytest.mark.parametrize("protocol", ["Do53", "DoT", "DoH"])
def test_table1_rows_reproduce(profile, protocol):
    row = failure_table(oracles.table1_records(profile, protocol))[(profile, protocol)]
    for cls, pct in zip(oracles.CLASSES, oracles.TABLE1[profile][protocol]):
        assert round(row[cls], 2) == pct
    assert sum(row.values()) == pytest.approx(100, abs=0.01)


# ------------------------------------------------------------------ properties

samples = st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=300)


@settings(max_examples=100, deadline=None)
@given(samples, st.floats(0, 1))
def test_cdf_matches_brute_force(values, p):
    s = cdf(values)
    assert s.quantile(0) == min(values)
    assert s.quantile(1) == max(values)
    assert s.quantile(p) == oracles.quantile(values, p)
    assert s.mean == pytest.approx(oracles.mean(values), rel=1e-9, abs=1e-6)
    assert s.stddev == pytest.approx(oracles.stddev(values), rel=1e-7, abs=1e-6)
    ys = [y for _, y in s.points()]
    assert ys == sorted(ys) and ys[-1] == 1.0


keyed = st.dictionaries(st.integers(0, 60), st.floats(-1e4, 1e4, allow_nan=False), min_size=1)


@settings(max_examples=100, deadline=None)
@given(keyed, keyed)
def test_paired_diff_matches_oracle(a, b):
    ref = oracles.diffs(a, b)
    if not ref:
        with pytest.raises(NoCommonKeys):
            paired_diff(a, b)
        return
    d = paired_diff(a, b)
    assert dict(d.diffs) == ref
    assert d.median_diff == oracles.quantile(list(ref.values()), 0.5)
    if len(ref) % 2 == 1:
        assert paired_diff(b, a).median_diff == -d.median_diff


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["default", "3g"]), st.sampled_from(["Do53", "DoH"]),
                          st.sampled_from(oracles.CLASSES)), max_size=200))
def test_failure_table_matches_oracle(rows):
    recs = [{"profile": p, "protocol": q, "outcome_class": c} for p, q, c in rows]
    got = failure_table(recs)
    ref = oracles.table(recs)
    assert got.keys() == ref.keys()
    for k, v in ref.items():
        assert got[k] == pytest.approx(v)
        assert sum(got[k].values()) == pytest.approx(100, abs=0.01)
