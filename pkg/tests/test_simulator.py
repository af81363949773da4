import random
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnslab.netem import PROFILES, NetworkProfile, get_profile
from dnslab.simulator import (Failure, FixedTimeout, Kind, RtoBackoff, SessionSpec,
                              TransportModel, compare_transports, sim_query, sim_session,
                              summarize)

LOSSLESS = PROFILES["default"]


def _time(x):
    return x.at if isinstance(x, Failure) else x


def test_model_invariants():
    with pytest.raises(ValueError):
        TransportModel(Kind.UDP_QUERY, retransmit=RtoBackoff())
    with pytest.raises(ValueError):
        TransportModel(Kind.TCP_TLS_QUERY, retransmit=FixedTimeout())
    assert TransportModel.dot(pooled=False).handshake_rtts == 2
    assert TransportModel.doh(pooled=False, tls12=True).handshake_rtts == 3
    assert RtoBackoff().rto(0.05, 0) == pytest.approx(0.2)
    assert RtoBackoff().rto(0.3, 2) == pytest.approx(2.4)


def test_lossless_single_exchange():
    rng = random.Random(0)
    assert sim_query(TransportModel.do53(), LOSSLESS, 0.1, rng) == pytest.approx(0.1)
    assert sim_query(TransportModel.dot(), LOSSLESS, 0.1, rng) == pytest.approx(0.1)
    # shaping latency on the uplink only adds once under Egress
    lag = NetworkProfile("lag", latency=0.02)
    assert sim_query(TransportModel.do53(), lag, 0.1, rng) == pytest.approx(0.12)
    assert sim_query(TransportModel.do53(), lag.with_direction("both"), 0.1, rng) == \
        pytest.approx(0.14)


def test_fresh_connection_pays_handshake():
    rng = random.Random(0)
    assert sim_query(TransportModel.dot(pooled=False), LOSSLESS, 0.1, rng) == pytest.approx(0.3)


def test_udp_geometric_retry_mean():
    p = NetworkProfile("half", loss_rate=0.5, direction="both")
    model = TransportModel.do53(timeout=5.0, attempts=10**9)
    times = [sim_query(model, p, 0.1, random.Random(i)) for i in range(20_000)]
    oracle = 0.1 + 5 * (1 / 0.25 - 1)
    assert statistics.fmean(times) == pytest.approx(oracle, rel=0.05)


def test_tcp_beats_udp_under_heavy_loss():
    p = NetworkProfile("half", loss_rate=0.5, direction="both")
    udp = TransportModel.do53(attempts=10**9)
    tcp = TransportModel.dot(retransmit=RtoBackoff(max_retransmits=10**3))
    u = statistics.fmean(_time(sim_query(udp, p, 0.1, random.Random(i))) for i in range(3000))
    t = statistics.fmean(_time(sim_query(tcp, p, 0.1, random.Random(i))) for i in range(3000))
    assert t < u


def test_attempt_budget_exhausted_is_failure():
    dead = NetworkProfile("dead", loss_rate=1.0)
    out = sim_query(TransportModel.do53(timeout=1.0, attempts=3), dead, 0.05, random.Random(0))
    assert isinstance(out, Failure)
    assert out.at == pytest.approx(3.0)


def test_degenerate_session_equals_query():
    model = TransportModel.do53()
    res = sim_session(SessionSpec(1, 1, model, LOSSLESS, 0.08, queries_per_name=1), 3, 0)
    assert res.samples == [pytest.approx(0.08)] * 3
    assert res.failures == 0


def test_pool_scheduling_arithmetic():
    q = 0.1
    res = sim_session(SessionSpec(16, 8, TransportModel.do53(), LOSSLESS, q), 5, 0)
    assert res.samples == [pytest.approx(2 * q)] * 5
    res = sim_session(SessionSpec(16, None, TransportModel.doh(), LOSSLESS, q), 5, 0)
    assert res.samples == [pytest.approx(q)] * 5


def test_lossy_4g_direction():
    p = get_profile("4g-lossy", "both")
    udp = sim_session(SessionSpec(20, 8, TransportModel.do53(), p, 0.05), 300, 1)
    tcp = sim_session(SessionSpec(20, 8, TransportModel.dot(), p, 0.05), 300, 1)
    assert statistics.median(tcp.samples) < statistics.median(udp.samples)


def test_identical_specs_identical_rows():
    spec = SessionSpec(10, 4, TransportModel.dot(), get_profile("3g"), 0.05)
    a, b = compare_transports([spec, spec], 50, 3)
    assert a == b
    with pytest.raises(ValueError):
        compare_transports([spec, SessionSpec(5, 4, TransportModel.dot(), LOSSLESS, 0.05)], 1, 0)


def test_equal_overheads_lossless_differ_only_by_handshakes():
    rate_limited = NetworkProfile("wire", uplink_bps=1e6, downlink_bps=1e6)
    rows = {}
    for model in (TransportModel.do53(), TransportModel.dot(per_query_overhead_bytes=0),
                  TransportModel.doh(per_query_overhead_bytes=0)):
        rows[model.label] = summarize(spec := SessionSpec(12, 4, model, rate_limited, 0.05),
                                      sim_session(spec, 5, 0)).median
    assert rows["Do53"] == pytest.approx(rows["DoT"]) == pytest.approx(rows["DoH"])
    fresh = SessionSpec(12, 4, TransportModel.dot(pooled=False, per_query_overhead_bytes=0),
                        LOSSLESS, 0.05)
    # four pooled-less workers each pay the 2-RTT handshake once
    assert sim_session(fresh, 1, 0).samples[0] == pytest.approx(rows["DoT"] + 2 * 0.05, abs=0.02)


def test_summarize_failure_rates():
    dead = NetworkProfile("dead", loss_rate=1.0)
    spec = SessionSpec(4, 4, TransportModel.do53(timeout=0.5, attempts=1), dead, 0.05)
    row = summarize(spec, sim_session(spec, 10, 0))
    assert row.failure_rate == 1.0 and row.session_failure_rate == 1.0
    assert row.median == pytest.approx(0.5)


# ------------------------------------------------------------------ properties

models = st.sampled_from([TransportModel.do53(), TransportModel.dot(),
                          TransportModel.doh(), TransportModel.dot(pooled=False)])


@settings(max_examples=25, deadline=None)
@given(models, st.sampled_from(list(PROFILES)), st.integers(1, 25), st.integers(0, 2**40))
def test_seed_determinism(model, profile, n, seed):
    spec = SessionSpec(n, 8, model, PROFILES[profile], 0.05)
    assert sim_session(spec, 5, seed) == sim_session(spec, 5, seed)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.01, 0.5), st.sampled_from([0.015, 0.03, 0.1]), st.integers(0, 1000))
def test_stochastic_dominance(base_rtt, loss, seed):
    p = NetworkProfile("lossy", loss_rate=loss, direction="both")
    udp = TransportModel.do53()
    tcp = TransportModel.dot()
    n = 2000
    u = statistics.fmean(_time(sim_query(udp, p, base_rtt, random.Random(seed * n + i)))
                         for i in range(n))
    t = statistics.fmean(_time(sim_query(tcp, p, base_rtt, random.Random(seed * n + i)))
                         for i in range(n))
    assert t <= u


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 30), st.integers(0, 3000), st.integers(1, 3000),
       st.sampled_from([2.5e5, 1e6, 7.44e6]))
def test_overhead_never_lowers_makespan_lossless(n, base, extra, rate):
    p = NetworkProfile("wire", uplink_bps=rate, downlink_bps=rate)
    low = SessionSpec(n, 8, TransportModel.dot(per_query_overhead_bytes=base), p, 0.05)
    high = SessionSpec(n, 8, TransportModel.dot(per_query_overhead_bytes=base + extra), p, 0.05)
    assert sim_session(high, 1, 0).samples[0] >= sim_session(low, 1, 0).samples[0] - 1e-12


def test_overhead_never_lowers_median_on_3g():
    p = get_profile("3g", "both")
    medians = [statistics.median(sim_session(
        SessionSpec(20, 8, TransportModel.dot(per_query_overhead_bytes=ov), p, 0.05),
        300, 7).samples) for ov in (0, 100, 500, 2000, 5000)]
    assert medians == sorted(medians)


@settings(max_examples=25, deadline=None)
@given(models, st.integers(1, 40), st.floats(0.01, 0.3))
def test_pool_monotone_lossless(model, n, rtt):
    p = NetworkProfile("wire", latency=0.02, uplink_bps=1e6, downlink_bps=1e6)
    spans = [sim_session(SessionSpec(n, pool, model, p, rtt), 1, 0).samples[0]
             for pool in (1, 2, 4, 8, 16, None)]
    assert all(b <= a + 1e-12 for a, b in zip(spans, spans[1:]))


@pytest.mark.parametrize("model", [TransportModel.do53(), TransportModel.dot(),
                                   TransportModel.doh(pooled=False)], ids=lambda m: m.label)
def test_pool_monotone_median_on_3g(model):
    p = get_profile("3g", "both")
    medians = [statistics.median(sim_session(SessionSpec(20, pool, model, p, 0.05), 200, 7).samples)
               for pool in (1, 2, 4, 8, 16, None)]
    assert all(b <= a for a, b in zip(medians, medians[1:]))
