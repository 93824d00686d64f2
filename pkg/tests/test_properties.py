import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from dnslec import names
from dnslec.config import PROPERTY_TAGS, ConfigError, VerifierConfig
from dnslec.ingest import parse_zonefile
from dnslec.lec import REWRITES, ActionType, build_system
from dnslec.oracle import ConcreteQuery, ConcreteSystem, run_concrete
from dnslec.properties import check_all, check_trace, load_blob, validate_report
from dnslec.symexec import Executor, Log, Trace
from dnslec.synth import SynthSpec, generate
from support import verify, workflow

SOA = "@ SOA ns host 1 2 3 4 5\n"

TLD = """$ORIGIN test.
@ SOA tld. host 1 2 3 4 5
lame NS ns.lame.test.
ns.lame A 192.0.2.10
noglue NS ns.noglue.test.
incons NS ns.incons.test.
ns.incons A 192.0.2.20
"""
NOGLUE = "$ORIGIN noglue.test.\n" + SOA + "@ NS ns.noglue.test.\nns A 192.0.2.30\n"
INCONS = "$ORIGIN incons.test.\n" + SOA + "@ NS ns.incons.test.\nns A 192.0.2.99\n"


def broken_system():
    groups = {
        "tld.": [parse_zonefile(TLD)],
        "ns.lame.test.": [],
        "ns.noglue.test.": [parse_zonefile(NOGLUE)],
        "ns.incons.test.": [parse_zonefile(INCONS)],
    }
    return build_system(groups)


def found(report, tag):
    return [f for f in report.findings if f.property == tag]


def test_delegation_detectors():
    system = broken_system()
    _, report = verify(system)
    lame = found(report, "lame_delegation")
    assert len(lame) == 1 and lame[0].severity == "info"
    assert "lame.test." in lame[0].key[0]
    glue = found(report, "missing_glue")
    assert len(glue) == 1 and glue[0].key[1] == ("ns.noglue.test.",)
    incons = found(report, "delegation_inconsistency")
    assert [f.key[1] for f in incons] == ["ns.incons.test."]


def test_expected_names_promote_to_errors():
    system = broken_system()
    config = VerifierConfig(expected_names=("www.lame.test.",))
    _, report = verify(system, config)
    (lame,) = found(report, "lame_delegation")
    assert lame.severity == "error"


def test_max_length_needs_exact_loops():
    zone = parse_zonefile("$ORIGIN grow.test.\n" + SOA + "@ DNAME a.grow.test.\n")
    system = build_system({"ns.": [zone]}, rl=2)
    _, report = verify(system, loop_mode="exact")
    assert found(report, "query_exceeds_max_length")
    _, coarse = verify(system)
    assert found(coarse, "rewriting_loop")


def test_workflow_findings_and_evidence():
    system, tree, report = workflow()
    s = system.space
    (blackhole,) = found(report, "rewrite_blackholing")
    v = blackhole.representative
    assert v.evidence == s.get_space(names.from_text("www.went.net."), s.types_except("CNAME"))
    (loop,) = found(report, "rewriting_loop")
    assert loop.representative.evidence & s.types_pred(["A"]) == s.get_space(names.from_text("a.went.com."), ["A"])
    assert len(found(report, "hop_count")) == 4
    assert all(f.severity == "warning" for f in found(report, "hop_count"))


def test_evidence_replays_concretely():
    system, tree, report = workflow()
    csys = ConcreteSystem.from_system(system)
    expected = {"rewrite_blackholing": ActionType.NONEXIST, "rewriting_loop": ActionType.LOOP}
    for tag, atype in expected.items():
        (finding,) = found(report, tag)
        v = finding.representative
        start = v.trace.logs[min(v.logs[1:])]
        qname, qtype = system.space.pick(start.q_in)
        runs = run_concrete(csys, ConcreteQuery(qname, qtype), entry=start.nameserver)
        assert any(r.terminal.atype is atype and r.steps[0].atype in REWRITES for r in runs)


def test_clean_answer_has_no_violations():
    system, _, _ = workflow()
    q = system.space.get_space(names.from_text("ns1.went.net."), ["A"])
    (lone,) = Executor(system).run(q, entries=["ns1.went.net."]).traces()
    assert lone.terminal.atype is ActionType.ANSWER
    assert check_trace(lone, system) == []


def test_cyclic_dependency_on_repeated_log():
    system, tree, _ = workflow()
    base = next(t for t in tree.traces() if t.logs[0].atype is ActionType.DELEGATE)
    first = base.logs[0]
    trace = Trace((first, first, base.logs[-1]))
    tags = [v.property for v in check_trace(trace, system, properties=["cyclic_zone_dependency"])]
    assert tags == ["cyclic_zone_dependency"]


def test_empty_and_unknown():
    system, _, _ = workflow()
    report = check_all([], system)
    assert report.findings == [] and report.trace_count == 0
    with pytest.raises(ConfigError):
        check_all([], system, properties=["made_up"])


def test_report_json_validates_and_blobs_load():
    system, _, report = workflow()
    doc = report.to_json(system.space)
    validate_report(doc)
    assert doc["summary"]["findings"] == 6
    blob = next(f for f in doc["findings"] if f["property"] == "rewriting_loop")["evidence"]
    (loop,) = found(report, "rewriting_loop")
    assert load_blob(system.space, blob) == loop.representative.evidence


def test_strict_blackholing_counts_service_failures():
    zone = parse_zonefile("$ORIGIN a.test.\n" + SOA + "x CNAME nowhere.example.\n")
    system = build_system({"ns.": [zone]})
    _, default = verify(system)
    _, strict = verify(system, VerifierConfig(blackhole_mode="strict"))
    assert not found(default, "rewrite_blackholing")
    assert found(strict, "rewrite_blackholing")


corpus_seeds = st.integers(0, 5000)


@settings(max_examples=10, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(corpus_seeds)
def test_detectors_are_independent_and_evidence_is_contained(seed):
    system = build_system(generate(SynthSpec(zones=5, records_per_zone=8, rewrite_density=0.4, seed=seed)).groups)
    tree = Executor(system).run()
    traces = tree.traces()
    everything = check_all(traces, system, properties=PROPERTY_TAGS)
    space = system.space
    for f in everything.findings:
        for v in f.violations:
            assert v.evidence != space.false
            assert all(0 <= i < len(v.trace.logs) for i in v.logs)
            assert v.evidence & ~v.trace.logs[v.logs[0]].q_in == space.false
    for tag in PROPERTY_TAGS:
        alone = check_all(traces, system, properties=[tag])
        assert alone.signature() == [x for x in everything.signature() if x[0] == tag]


@settings(max_examples=10, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(corpus_seeds)
def test_each_blackholed_trace_is_reported_once(seed):
    system = build_system(generate(SynthSpec(zones=5, records_per_zone=8, rewrite_density=0.5, seed=seed)).groups)
    traces = Executor(system).run().traces()
    report = check_all(traces, system, properties=["rewrite_blackholing"])
    reported = [v.trace.id for f in report.findings for v in f.violations]
    expected = [
        t.id
        for t in traces
        if t.terminal.atype is ActionType.NONEXIST and any(log.atype in REWRITES for log in t.logs[:-1])
    ]
    assert sorted(reported) == sorted(expected)
