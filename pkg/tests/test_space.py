import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnslec import names
from dnslec.ingest import ResourceRecord
from dnslec.lec import all_records
from dnslec.space import (
    ABSENT,
    FIRST_LABEL_CODE,
    OTHER,
    LabelCodec,
    NameTooLong,
    PredicateCodec,
    QuerySpace,
    RebuildRequired,
    encode_labels,
    load_node_table,
)
from support import workflow_groups


def n(text):
    return names.from_text(text)


@pytest.fixture(scope="module")
def wf_space():
    return QuerySpace(encode_labels(all_records(workflow_groups())))


def test_workflow_codes_follow_first_occurrence(wf_space):
    codec = wf_space.codec
    assert list(codec.label_map(1))[:2] == ["com", "net"]
    shared = set()
    for level in range(1, codec.max_labels + 1):
        shared.update(codec.label_map(level))
    assert {"com", "went", "net", "www", "where", "dname", "a", "ns1"} <= shared
    # SOA and NS rdata are not coded
    assert "gtld-servers" not in shared
    for level in range(1, codec.max_labels + 1):
        codes = list(codec.label_map(level).values())
        assert len(set(codes)) == len(codes)
        assert all(c >= FIRST_LABEL_CODE for c in codes)
        assert sorted(codes) == list(range(FIRST_LABEL_CODE, FIRST_LABEL_CODE + len(codes)))


def test_codec_is_deterministic():
    a = encode_labels(all_records(workflow_groups()))
    b = encode_labels(all_records(workflow_groups()))
    assert a.to_dict() == b.to_dict()
    assert LabelCodec.from_dict(a.to_dict()).to_dict() == a.to_dict()


def test_empty_record_set():
    codec = encode_labels([])
    assert all(bits == 1 for bits in codec.level_bits)
    assert all(not mp for mp in codec.level_maps)


def test_dname_shares_maps_above_its_shift():
    codec = encode_labels([ResourceRecord(n("a.com."), "DNAME", "a.a.com.")])
    assert codec.d_share <= 3
    assert codec.label_map(3) is codec.label_map(4)
    assert codec.code(3, "a") == codec.code(4, "a")


def test_get_space_flags(wf_space):
    s = wf_space
    for text in ("went.com.", "com.", "a.dname.went.net."):
        name = n(text)
        f0, f1, f2 = (s.get_space(name, None, flag) for flag in (0, 1, 2))
        assert f1 == f0 | f2
        assert f0 & f2 == s.false
    went = s.get_space(n("went.com."), None, 1)
    assert s.contains(went, n("www.went.com."), "A")
    assert s.contains(went, n("unheard-of.went.com."), "MX")
    assert not s.contains(went, n("went.net."), "A")
    exact_a = s.get_space(n("went.com."), ["A"], 0)
    assert s.contains(exact_a, n("went.com."), "A")
    assert not s.contains(exact_a, n("went.com."), "NS")
    assert s.contains(s.full, n("zz.yy."), "TYPE65534")


def test_too_long_names_are_rejected(wf_space):
    long = tuple(f"l{i}" for i in range(wf_space.max_labels + 1))
    with pytest.raises(NameTooLong):
        wf_space.get_space(long)
    with pytest.raises(NameTooLong):
        wf_space.contains(wf_space.full, long, "A")


def test_rewrites_on_workflow_names(wf_space):
    s = wf_space
    q = s.get_space(n("where.went.com."), ["A", "AAAA"], 0)
    out = s.rewrite_cname(q, n("www.went.net."))
    assert out == s.get_space(n("www.went.net."), ["A", "AAAA"], 0)
    assert s.rewrite_cname(s.false, n("www.went.net.")) == s.false
    q = s.get_space(n("a.dname.went.net."), ["A"], 0)
    out, overflow = s.rewrite_dname(q, n("dname.went.net."), n("went.com."))
    assert out == s.get_space(n("a.went.com."), ["A"], 0)
    assert overflow == s.false
    same, _ = s.rewrite_dname(q, n("dname.went.net."), n("dname.went.net."))
    assert same == q


def test_dname_growth_and_overflow():
    recs = [ResourceRecord(n("a.com."), "DNAME", "a.a.com."), ResourceRecord(n("b.a.com."), "A", "192.0.2.1")]
    s = QuerySpace(encode_labels(recs, rl=1))
    out, overflow = s.rewrite_dname(s.get_space(n("b.a.com."), ["A"]), n("a.com."), n("a.a.com."))
    assert out == s.get_space(n("b.a.a.com."), ["A"])
    assert overflow == s.false
    deepest = s.get_space(n("x.b.a.com."), None, 1)
    out, overflow = s.rewrite_dname(deepest, n("a.com."), n("a.a.com."))
    assert overflow != s.false
    assert out & overflow == s.false


def test_pick_prefers_known_labels(wf_space):
    s = wf_space
    assert s.pick(s.false) is None
    qname, qtype = s.pick(s.get_space(n("went.com."), None, 1))
    assert names.is_under(qname, n("went.com."))
    assert qtype != "TYPE65534"


def test_absorb_uses_spare_codes_and_keeps_predicates():
    codec = encode_labels([ResourceRecord(n("x.test."), "A", "192.0.2.1")])
    s = QuerySpace(codec)
    before = s.get_space(n("x.test."), None, 1)
    codec.absorb(ResourceRecord(n("y.test."), "A", "192.0.2.2"))
    assert s.get_space(n("x.test."), None, 1) == before
    assert s.contains(before, n("x.test."), "A")
    with pytest.raises(RebuildRequired):
        for i in range(2 ** max(codec.level_bits)):
            codec.absorb(ResourceRecord((f"h{i}", "test"), "A", "192.0.2.3"))


def test_predicate_codec_round_trip(wf_space):
    s = wf_space
    preds = [s.full, s.false, s.get_space(n("went.com."), ["A"], 1), s.other_range(2)]
    codec = PredicateCodec(s)
    refs = [codec.ref(p) for p in preds]
    fresh = QuerySpace(LabelCodec.from_dict(s.codec.to_dict()))
    table = load_node_table(fresh, codec.dump())
    assert table[refs[0]] == fresh.full
    assert table[refs[1]] == fresh.false
    assert table[refs[2]] == fresh.get_space(n("went.com."), ["A"], 1)


# exhaustive checks over a toy codec -------------------------------------------

TOY_RECORDS = [
    ResourceRecord(n("a.com."), "A", "192.0.2.1"),
    ResourceRecord(n("b.com."), "CNAME", "a.com."),
    ResourceRecord(n("d.com."), "DNAME", "a.com."),
]
TOY = QuerySpace(encode_labels(TOY_RECORDS, rl=1, d_share=1))
TOY_NAMES = [n(t) for t in ("com.", "a.com.", "b.com.", "d.com.", "a.d.com.", "b.a.com.", "x.com.", "a.x.")]
TOY_TYPES = ["A", "CNAME", "MX", "TYPE65534"]


def toy_universe():
    labels = sorted(TOY.codec.label_map(1)) + [TOY.codec.other_witness(1)]
    out = []
    for depth in range(1, TOY.max_labels + 1):
        stack = [()]
        for _ in range(depth):
            stack = [(lab,) + rest for rest in stack for lab in labels]
        out.extend(stack)
    return [(q, t) for q in out for t in TOY_TYPES]


UNIVERSE = toy_universe()

piece = st.tuples(st.sampled_from(TOY_NAMES), st.sampled_from([0, 1, 2]), st.sets(st.sampled_from(TOY_TYPES[:3]), min_size=1))


@st.composite
def toy_predicates(draw):
    u = TOY.false
    for name, flag, types in draw(st.lists(piece, max_size=4)):
        part = TOY.get_space(name, sorted(types), flag)
        u = u & ~part if draw(st.booleans()) else u | part
    return u


def members(p):
    return {q for q in UNIVERSE if TOY.contains(p, *q)}


@settings(max_examples=40, deadline=None)
@given(toy_predicates(), toy_predicates())
def test_algebra_laws(a, b):
    assert (a & ~b) | (a & b) == a
    assert a & ~a == TOY.false
    assert ~(a | b) == ~a & ~b
    assert members(a | b) == members(a) | members(b)
    assert members(a & b) == members(a) & members(b)


@settings(max_examples=30, deadline=None)
@given(toy_predicates())
def test_cname_rewrite_matches_concrete(p):
    q = p & TOY.get_space(n("b.com."), TOY.types_except("CNAME"), 0)
    out = TOY.rewrite_cname(q, n("a.com."))
    expected = {(n("a.com."), t) for _, t in members(q)}
    assert members(out) == expected


@settings(max_examples=30, deadline=None)
@given(toy_predicates())
def test_dname_rewrite_matches_concrete(p):
    src, dst = n("d.com."), n("a.com.")
    q = p & TOY.get_space(src, None, 2)
    out, overflow = TOY.rewrite_dname(q, src, dst)
    expected = set()
    for qname, t in members(q):
        new = names.replace_suffix(qname, src, dst)
        if len(new) <= TOY.max_labels:
            expected.add((new, t))
    assert members(out) == expected
    assert members(overflow) == set()


def test_reserved_codes_differ():
    assert ABSENT != OTHER
    assert FIRST_LABEL_CODE > max(ABSENT, OTHER)
