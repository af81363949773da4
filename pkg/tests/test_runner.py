import itertools
import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import do53
from dnslab.runner import (ConfigError, EmptySelection, ExperimentConfig, MalformedList, Mode,
                           Provider, SessionSummary, Trial, classify_outcome, execute_plan,
                           load_config, load_website_list, plan_experiment, read_records,
                           run_campaign, synthetic_config)
from dnslab.stats import OUTCOME_CLASSES
from dnslab.transports import Protocol, QueryOutcome, Result


@pytest.fixture
def tranco(tmp_path):
    path = tmp_path / "top.csv"
    path.write_text("rank,domain\n" + "".join(f"{r},site{r}.example\n"
                                              for r in list(range(1, 1001)) +
                                              list(range(99_000, 100_001))))
    return path


def test_list_top_1000(tranco):
    entries = load_website_list(tranco, (1, 1000))
    assert len(entries) == 1000
    assert entries[0] == (1, "site1.example") and entries[-1][0] == 1000


def test_list_tail_slice(tranco):
    entries = load_website_list(tranco, (99_000, 100_000))
    assert len(entries) == 1001
    assert [r for r, _ in entries] == list(range(99_000, 100_001))


def test_list_malformed(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,a.example\nabc,,\n")
    with pytest.raises(MalformedList, match=":2:"):
        load_website_list(path)


def test_list_empty_selection(tranco):
    with pytest.raises(EmptySelection):
        load_website_list(tranco, (5000, 6000))


def test_config_requires_endpoints():
    with pytest.raises(ConfigError):
        ExperimentConfig(((1, "a"),), (Provider("half", "1.1.1.1:53", "1.1.1.1:853"),))
    # a Do53-only baseline is allowed and only gets Do53 trials
    cfg = ExperimentConfig(((1, "a"),), (Provider("local", "127.0.0.1:53"),
                                         Provider("cf", "1.1.1.1:53", "1.1.1.1:853",
                                                  "https://1.1.1.1/dns-query")))
    plan = plan_experiment(cfg)
    assert Counter(t.provider for t in plan.trials) == {"local": 1, "cf": 3}


def test_plan_cardinality():
    cfg = synthetic_config(2, protocols=("Do53", "DoT"), providers=2)
    plan = plan_experiment(cfg)
    assert len(plan.trials) == 8
    assert len({(t.website, t.protocol, t.provider) for t in plan.trials}) == 8


def test_plan_determinism():
    cfg = synthetic_config(20, providers=3, seed=11, repetitions=3)
    assert plan_experiment(cfg) == plan_experiment(synthetic_config(20, providers=3, seed=11,
                                                                    repetitions=3))


def website_order(plan):
    return tuple(dict.fromkeys(t.website for t in plan.trials if t.repetition == 0))


def test_plan_seed_variety():
    orders = {website_order(plan_experiment(synthetic_config(20, seed=s))) for s in range(100)}
    assert len(orders) >= 95


def test_plan_reshuffles_each_repetition():
    plan = plan_experiment(synthetic_config(20, repetitions=2, seed=4))
    reps = [tuple(dict.fromkeys(t.website for t in plan.trials if t.repetition == r))
            for r in (0, 1)]
    assert reps[0] != reps[1]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 3), st.integers(1, 4), st.integers(1, 3),
       st.integers(0, 2**63))
def test_plan_exactly_once_per_repetition(n_sites, n_protos, n_provs, reps, seed):
    protos = ["Do53", "DoT", "DoH"][:n_protos]
    cfg = synthetic_config(n_sites, protocols=protos, providers=n_provs, seed=seed,
                           repetitions=reps)
    plan = plan_experiment(cfg)
    for r in range(reps):
        got = Counter((t.website, t.protocol.value, t.provider)
                      for t in plan.trials if t.repetition == r)
        want = {(w, p, f"p{i}"): 1 for (_, w) in cfg.websites for p in protos
                for i in range(n_provs)}
        assert got == want
    # a website's combinations are contiguous in the plan
    for r in range(reps):
        sites = [t.website for t in plan.trials if t.repetition == r]
        assert [k for k, _ in itertools.groupby(sites)] == list(dict.fromkeys(sites))


def outcome(result, t_start=0.0, response_time=10.0):
    return QueryOutcome("a.test", Protocol.DOT, "p", t_start, response_time, 0.0, result)


def test_classify_examples():
    assert classify_outcome([outcome(Result.ANSWERED)]) == "Successful"
    assert classify_outcome([outcome(Result.ANSWERED), outcome(Result.ANSWERED, 31.0)]) == \
        "PageLoadTimeout"
    assert classify_outcome(SessionSummary(31.0, 0, 20)) == "PageLoadTimeout"
    assert classify_outcome(SessionSummary(1.0, 0, 20)) == "Successful"
    assert classify_outcome(SessionSummary(1.0, 2, 20)) == "DnsError"
    assert classify_outcome([outcome(Result.TIMEOUT)]) == "DnsError"
    assert classify_outcome([outcome(Result.DNS_ERROR)]) == "DnsError"
    assert classify_outcome([outcome(Result.TRANSPORT_ERROR)]) == "OtherError"
    assert classify_outcome(RuntimeError("driver crashed")) == "HarnessError"
    assert classify_outcome([]) == "HarnessError"


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(list(Result)), st.floats(0, 50), st.floats(0, 40_000)),
                max_size=10))
def test_classify_total_partition(rows):
    cls = classify_outcome([outcome(r, t, rt) for r, t, rt in rows])
    assert cls in OUTCOME_CLASSES


def test_lossless_sim_all_successful(tmp_path):
    cfg = synthetic_config(10, providers=2, profile="default", seed=3)
    records = run_campaign(cfg, "sim", tmp_path / "out.jsonl")
    assert len(records) == 60
    assert {r.outcome_class for r in records} == {"Successful"}


def test_live_nxdomain(lab):
    prov = Provider("lab", do53(lab).server)
    cfg = ExperimentConfig(((1, "nope.test"), (2, "a.test")), (prov,), ("Do53",))
    records = execute_plan(plan_experiment(cfg), cfg, Mode.LIVE)
    by = {r.trial.website: r for r in records}
    assert by["nope.test"].outcome_class == "DnsError"
    assert by["a.test"].outcome_class == "Successful"
    assert by["a.test"].response_time_ms > 0


def test_runner_exceptions_become_harness_errors(tmp_path):
    cfg = synthetic_config(2, protocols=("Do53",))

    def boom(trial, cfg):
        raise RuntimeError("no browser")

    records = execute_plan(plan_experiment(cfg), cfg, "sim", tmp_path / "o.jsonl", runner=boom)
    assert [r.outcome_class for r in records] == ["HarnessError"] * 2


def strip_times(path):
    lines = []
    for line in open(path):
        rec = json.loads(line)
        rec.pop("ts", None)
        rec.pop("created", None)
        lines.append(json.dumps(rec, sort_keys=True))
    return lines


def test_sim_jsonl_deterministic(tmp_path):
    cfg = synthetic_config(6, providers=2, profile="4g-lossy", seed=9, repetitions=2)
    run_campaign(cfg, "sim", tmp_path / "a.jsonl")
    run_campaign(cfg, "sim", tmp_path / "b.jsonl")
    assert strip_times(tmp_path / "a.jsonl") == strip_times(tmp_path / "b.jsonl")
    header = json.loads(open(tmp_path / "a.jsonl").readline())
    assert header["type"] == "header" and header["schema_version"] == 1
    rec = read_records(tmp_path / "a.jsonl")[0]
    for key in ("schema_version", "website", "rank", "protocol", "provider", "profile",
                "outcome_class", "response_time_ms", "connection_setup_ms", "makespan_ms",
                "wire_up", "wire_down", "error_detail", "ts"):
        assert key in rec


class Crash(BaseException):
    pass


def test_resume_skips_completed(tmp_path):
    cfg = synthetic_config(5, providers=1, seed=2)
    plan = plan_experiment(cfg)
    out = tmp_path / "r.jsonl"
    calls = []
    resumed = False

    def counting(trial, cfg):
        calls.append(trial.coords)
        if len(calls) == 7 and not resumed:
            raise Crash
        from dnslab.runner import run_simulated
        return run_simulated(trial, cfg)

    with pytest.raises(Crash):
        execute_plan(plan, cfg, "sim", out, runner=counting)
    # simulate a torn final line from the crash
    with open(out, "a") as fh:
        fh.write('{"website": "site')
    calls.clear()
    resumed = True
    execute_plan(plan, cfg, "sim", out, resume=True, runner=counting)
    assert len(calls) == len(plan.trials) - 6
    recs = read_records(out)
    assert sorted((r["repetition"], r["website"], r["protocol"], r["provider"]) for r in recs) \
        == sorted(t.coords for t in plan.trials)


def test_load_config(tmp_path, tranco):
    ini = tmp_path / "exp.ini"
    ini.write_text(f"""[experiment]
websites = {tranco.name}
rank_range = 1-5
protocols = Do53, DoH
profile = 3g
seed = 7
repetitions = 2
base_rtt_ms = 40

[provider:local]
do53 = 127.0.0.1:53

[provider:cf]
do53 = 1.1.1.1:53
doh = https://cloudflare-dns.com/dns-query
""")
    cfg = load_config(ini)
    assert len(cfg.websites) == 5 and cfg.seed == 7 and cfg.base_rtt_s == 0.04
    assert cfg.protocols == (Protocol.DO53, Protocol.DOH)
    assert [p.label for p in cfg.providers] == ["local", "cf"]
    assert len(plan_experiment(cfg).trials) == 2 * 5 * 3


def test_trial_coords():
    t = Trial(1, 10, "x.example", Protocol.DOH, "cf")
    assert t.coords == (1, "x.example", "DoH", "cf")
