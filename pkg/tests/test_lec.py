import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from dnslec import names
from dnslec.ingest import ResourceRecord, Zonefile, parse_zonefile
from dnslec.lec import (
    ActionType,
    DuplicateOrigin,
    build_system,
    check_minimal,
    check_table,
    construct_lecs,
    diff_systems,
    minimize_lecs,
    rank,
)
from dnslec.space import QuerySpace, encode_labels
from dnslec.synth import SynthSpec, generate
from strategies import zonefiles
from support import workflow_groups


def n(text):
    return names.from_text(text)


@pytest.fixture(scope="module")
def wf():
    return build_system(workflow_groups())


@pytest.mark.parametrize(
    "record, origin, expected",
    [
        (ResourceRecord(n("went.com."), "NS", "ns1.went.com."), "com.", (508, None)),
        (ResourceRecord(n("dname.went.net."), "DNAME", "went.com."), "went.net.", (505, 2)),
        (ResourceRecord(n("www.went.com."), "A", "192.0.2.1"), "went.com.", (2, None)),
        (ResourceRecord(n("*.went.com."), "CNAME", "a.went.net."), "went.com.", (1, 0)),
        (ResourceRecord(n("where.went.com."), "CNAME", "a.went.net."), "went.com.", (3, 2)),
        (ResourceRecord(n("went.com."), "NS", "ns1.went.com."), "went.com.", (2, None)),
    ],
)
def test_rank(record, origin, expected):
    assert rank(record, n(origin)) == expected


def test_tld_table_matches_the_workflow_partition(wf):
    s = wf.space
    table = wf.tables["a.gtld-servers.net."]
    (zone,) = table.zones
    delegate = [r for r in zone.rules if r.action.atype is ActionType.DELEGATE]
    assert len(delegate) == 1
    assert delegate[0].bdd == s.get_space(n("went.com."), None, 1)
    assert delegate[0].action.targets == ("ns1.went.com.",)
    assert delegate[0].action.glue == (("ns1.went.com.", "A", "192.0.2.1"),)
    com = s.get_space(n("com."), None, 1)
    assert zone.nx_rule.bdd | zone.rules[-1].bdd | delegate[0].bdd == com
    assert table.refuse_rule.bdd == s.full & ~com


def test_cname_rule_claims_all_but_cname(wf):
    s = wf.space
    zone = wf.tables["ns1.went.com."].zones[0]
    rule = zone.rule(("where.went.com.", "CNAME", 3))
    assert rule.action.atype is ActionType.REWRITE_C
    assert rule.bdd == s.get_space(n("where.went.com."), s.types_except("CNAME"), 0)
    companion = zone.rule(("where.went.com.", "CNAME", 2))
    assert companion.bdd == s.get_space(n("where.went.com."), ["CNAME"], 0)


def test_soa_only_zone_and_empty_nameserver():
    zf = parse_zonefile("$ORIGIN x.test.\n@ SOA ns host 1 2 3 4 5\n")
    system = build_system({"ns.": [zf], "idle.": []})
    (zone,) = system.tables["ns."].zones
    assert len(zone.rules) == 1 and zone.rules[0].action.atype is ActionType.ANSWER
    assert zone.nx_rule.bdd == zone.bdd & ~zone.rules[0].bdd
    assert system.tables["idle."].refuse_rule.bdd == system.space.full


def test_equal_records_aggregate():
    zf = parse_zonefile("$ORIGIN x.test.\n@ SOA ns host 1 2 3 4 5\nw A 192.0.2.1\nw A 192.0.2.2\n")
    zone = build_system({"ns.": [zf]}).tables["ns."].zones[0]
    rule = zone.rule(("w.x.test.", "A", 2))
    assert rule.action.adata == ("A", ("192.0.2.1", "192.0.2.2"))


def test_nested_zones_take_longest_origin_first():
    parent = parse_zonefile("$ORIGIN com.\n@ SOA ns host 1 2 3 4 5\nwww.went A 192.0.2.1\n")
    child = parse_zonefile("$ORIGIN went.com.\n@ SOA ns host 1 2 3 4 5\nwww A 192.0.2.2\n")
    system = build_system({"ns.": [parent, child]})
    s, table = system.space, system.tables["ns."]
    assert [z.label for z in table.zones] == ["went.com.", "com."]
    assert not check_table(table, s)
    assert s.contains(table.zones[0].bdd, n("www.went.com."), "A")
    assert table.zones[1].bdd & s.get_space(n("went.com."), None, 1) == s.false


def test_duplicate_origin_is_rejected():
    zf = parse_zonefile("$ORIGIN x.test.\n@ SOA ns host 1 2 3 4 5\n")
    space = QuerySpace(encode_labels(zf.records))
    with pytest.raises(DuplicateOrigin):
        construct_lecs([zf, zf], space, "ns.")


def test_minimal_set_merges_equal_actions():
    a = parse_zonefile("$ORIGIN a.test.\n@ SOA ns host 1 2 3 4 5\n")
    b = parse_zonefile("$ORIGIN b.test.\n@ SOA ns host 1 2 3 4 5\n")
    system = build_system({"ns.": [a, b]})
    classes = minimize_lecs(system.tables["ns."], system.space)
    kinds = [action.atype for _, action in classes]
    assert kinds.count(ActionType.NONEXIST) == 1
    assert kinds.count(ActionType.REFUSE) == 1


def test_workflow_tables_are_sound(wf):
    for table in wf.tables.values():
        assert not check_table(table, wf.space)
        classes = minimize_lecs(table, wf.space)
        assert not check_minimal(classes, wf.space, table)
        assert len(classes) <= table.rule_count() + 2


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.lists(zonefiles(), min_size=1, max_size=3, unique_by=lambda z: z.origin))
def test_random_tables_are_complete_disjoint_and_minimal(zones):
    system = build_system({"ns.": zones})
    table, space = system.tables["ns."], system.space
    assert not check_table(table, space)
    classes = minimize_lecs(table, space)
    assert not check_minimal(classes, space, table)
    assert len(classes) <= table.rule_count() + 2
    for i, (p, a) in enumerate(classes):
        for q, b in classes[i + 1 :]:
            assert p & q == space.false and a != b


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(zonefiles())
def test_rank_dominance(zone):
    system = build_system({"ns.": [zone]})
    space = system.space
    rules = system.tables["ns."].zones[0].rules
    for i, high in enumerate(rules):
        for low in rules[i + 1 :]:
            overlap = high.hit & low.hit
            if high.rank > low.rank:
                assert overlap & low.bdd == space.false


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(zonefiles())
def test_zone_order_does_not_matter(zone):
    extra = Zonefile(n("z.test."), (ResourceRecord(n("z.test."), "SOA", "ns.test. h.test. 1 2 3 4 5"),))
    a = build_system({"ns.": [zone, extra]})
    b = build_system({"ns.": [extra, zone]}, space=a.space)
    assert not diff_systems(a, b)


def test_synthetic_corpus_is_sound():
    system = build_system(generate(SynthSpec(zones=20, records_per_zone=15, seed=3)).groups)
    for table in system.tables.values():
        assert not check_table(table, system.space)
        assert not check_minimal(minimize_lecs(table, system.space), system.space, table)
