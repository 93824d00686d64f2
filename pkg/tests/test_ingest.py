from pathlib import Path

import pytest
from hypothesis import given, settings

from dnslec import names
from dnslec.ingest import (
    ManifestError,
    ParseError,
    ResourceRecord,
    load_manifest,
    parse_record,
    parse_zonefile,
    read_zonefile,
)
from strategies import zonefiles
from support import WORKFLOW_MANIFEST, workflow_groups

INVALID = sorted((Path(__file__).parent / "data" / "invalid").glob("*.zone"))


def test_workflow_manifest_loads_three_groups():
    groups = workflow_groups()
    assert list(groups) == ["a.gtld-servers.net.", "ns1.went.com.", "ns1.went.net."]
    assert [len(z) for z in groups.values()] == [1, 1, 1]
    went = groups["ns1.went.com."][0]
    assert ResourceRecord(("went", "com"), "NS", "ns1.went.com.") in went.records
    assert ResourceRecord(("*", "went", "com"), "CNAME", "a.dname.went.net.") in went.records


def test_soa_only_zone():
    zf = parse_zonefile("$ORIGIN x.test.\n@ SOA ns host 1 2 3 4 5\n")
    assert zf.origin == ("x", "test")
    assert len(zf.records) == 1


def test_master_file_features():
    text = """
$ORIGIN x.test.
$TTL 1h
@   IN SOA ns host (
        1 ; serial
        2h 3600 1w 60 )
    IN NS ns
ns  300 IN A 192.0.2.1
txt TXT "a;b" "c"
mx  MX 10 mail.x.test.
"""
    zf = parse_zonefile(text)
    by_type = {r.rtype: r for r in zf.records}
    assert by_type["SOA"].rdata == "ns.x.test. host.x.test. 1 7200 3600 604800 60"
    assert by_type["NS"].rname == ("x", "test")
    assert by_type["TXT"].rdata == '"a;b" "c"'
    assert by_type["MX"].target == ("mail", "x", "test")


def test_origin_hint_without_directive():
    zf = parse_zonefile("@ SOA ns host 1 2 3 4 5\nwww A 192.0.2.9\n", "x.test.")
    assert zf.records[1].rname == ("www", "x", "test")


@pytest.mark.parametrize("path", INVALID, ids=lambda p: p.stem)
def test_invalid_zonefiles_raise(path):
    with pytest.raises(ParseError) as info:
        read_zonefile(path)
    assert info.value.line >= 1
    assert str(path) in str(info.value)


def test_invalid_corpus_is_not_empty():
    assert len(INVALID) >= 15


def test_parse_record_resolves_relative_names():
    rec = parse_record("where IN A 192.0.2.3", ("went", "com"))
    assert rec == ResourceRecord(("where", "went", "com"), "A", "192.0.2.3")
    with pytest.raises(ParseError):
        parse_record("a A 192.0.2.1\nb A 192.0.2.2", ("x",))


@settings(max_examples=60, deadline=None)
@given(zonefiles())
def test_round_trip(zf):
    again = parse_zonefile(zf.to_text())
    assert again.origin == zf.origin
    assert again.records == zf.records


@settings(max_examples=40, deadline=None)
@given(zonefiles())
def test_printing_is_idempotent(zf):
    once = parse_zonefile(zf.to_text()).to_text()
    assert parse_zonefile(once).to_text() == once


def write_manifest(tmp_path, body, zone_text="$ORIGIN x.test.\n@ SOA ns host 1 2 3 4 5\n"):
    (tmp_path / "x.zone").write_text(zone_text)
    path = tmp_path / "m.toml"
    path.write_text(body)
    return path


def test_manifest_errors(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "absent.toml")
    with pytest.raises(ManifestError):
        load_manifest(write_manifest(tmp_path, "bogus = 1\n"))
    with pytest.raises(ManifestError):
        load_manifest(write_manifest(tmp_path, '[[nameserver]]\nname = "a."\nzonefiles = ["nope.zone"]\n'))
    dup = '[[nameserver]]\nname = "a."\nzonefiles = []\n[[nameserver]]\nname = "A."\nzonefiles = []\n'
    with pytest.raises(ManifestError):
        load_manifest(write_manifest(tmp_path, dup))
    shared = '[[nameserver]]\nname = "a."\nzonefiles = ["x.zone"]\n[[nameserver]]\nname = "b."\nzonefiles = ["x.zone"]\n'
    with pytest.raises(ManifestError):
        load_manifest(write_manifest(tmp_path, shared))
    assert load_manifest(write_manifest(tmp_path, "allow_shared_zones = true\n" + shared)).groups


def test_parse_policy(tmp_path):
    body = '[[nameserver]]\nname = "a."\nzonefiles = ["x.zone"]\n'
    path = write_manifest(tmp_path, body, "$ORIGIN x.test.\nwww A 192.0.2.1\n")
    with pytest.raises(ParseError):
        load_manifest(path)
    result = load_manifest(path, policy="skip")
    assert result.groups == {"a.": []}
    assert len(result.skipped) == 1


def test_manifest_config_is_read():
    assert load_manifest(WORKFLOW_MANIFEST).manifest.config.fuel == 16
    assert names.to_text(workflow_groups()["ns1.went.net."][0].origin) == "went.net."
