import json

import pytest

from dnslec import names
from dnslec.cli import EXIT_FAILURE, EXIT_FINDINGS, EXIT_OK, main, parse_query
from dnslec.lec import build_system
from dnslec.snapshot import load
from support import FIX_CHANGES, WORKFLOW_MANIFEST, workflow_groups


@pytest.fixture
def snap(tmp_path):
    path = tmp_path / "wf.snap"
    assert main(["build", "--manifest", str(WORKFLOW_MANIFEST), "-o", str(path)]) == EXIT_OK
    return path


def test_build_writes_stats(tmp_path):
    stats = tmp_path / "stats.json"
    path = tmp_path / "wf.snap"
    assert main(["build", "--manifest", str(WORKFLOW_MANIFEST), "--stats-json", str(stats), "-o", str(path)]) == EXIT_OK
    doc = json.loads(stats.read_text())
    assert {ns["name"] for ns in doc["nameservers"]} == {"a.gtld-servers.net.", "ns1.went.com.", "ns1.went.net."}
    assert load(path).tree is None


def test_verify_reports_findings(snap, tmp_path, capsys):
    report = tmp_path / "report.json"
    assert main(["verify", "--snapshot", str(snap), "-o", str(report)]) == EXIT_FINDINGS
    doc = json.loads(report.read_text())
    assert {f["property"] for f in doc["findings"]} >= {"rewrite_blackholing", "rewriting_loop"}
    assert "findings:" in capsys.readouterr().out
    assert load(snap).tree is not None


def test_verify_query_and_property_subset(snap):
    assert main(["verify", "--snapshot", str(snap), "--query", "ns1.went.net.:A", "--no-store"]) == EXIT_OK
    assert main(["verify", "--snapshot", str(snap), "--properties", "hop_count", "--no-store"]) == EXIT_OK
    assert load(snap).tree is None


def test_update_fixes_the_blackhole(snap, tmp_path):
    assert main(["verify", "--snapshot", str(snap)]) == EXIT_FINDINGS
    report = tmp_path / "update.json"
    out = tmp_path / "fixed.snap"
    code = main(["update", "--snapshot", str(snap), "--changes", str(FIX_CHANGES), "--report", str(report), "-o", str(out)])
    assert code == EXIT_FINDINGS  # the wildcard loop remains
    doc = json.loads(report.read_text())
    assert "rewrite_blackholing" in {f["property"] for f in doc["delta"]["removed"]}
    assert doc["delta"]["added"] == []
    assert doc["timing"]["rebuilt"] is False and "full_rebuild_seconds" in doc["timing"]
    assert load(out).system.version > load(snap).system.version


def test_update_without_stored_run(snap, tmp_path):
    report = tmp_path / "update.json"
    args = ["update", "--snapshot", str(snap), "--changes", str(FIX_CHANGES), "--report", str(report), "--no-rebuild-timing"]
    assert main(args) == EXIT_FINDINGS
    assert "full_rebuild_seconds" not in json.loads(report.read_text())["timing"]


def test_update_with_new_labels_rebuilds(snap, tmp_path):
    changes = tmp_path / "new.changes"
    changes.write_text("".join(f"add went.net. host{i}.went.net. 300 IN A 192.0.2.7\n" for i in range(64)))
    report = tmp_path / "update.json"
    main(["update", "--snapshot", str(snap), "--changes", str(changes), "--report", str(report)])
    assert json.loads(report.read_text())["timing"]["rebuilt"] is True
    codec = load(snap).system.codec
    assert any("host63" in codec.label_map(level) for level in range(codec.max_labels))


def test_stats(snap, capsys):
    assert main(["stats", "--snapshot", str(snap), "--json"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "minimal_lecs" in out and "stored execution: no" in out


def test_failures_exit_two(snap, tmp_path, monkeypatch):
    assert main(["stats", "--snapshot", str(tmp_path / "missing.snap")]) == EXIT_FAILURE
    assert main(["build", "--manifest", str(tmp_path / "missing.toml"), "-o", str(tmp_path / "x")]) == EXIT_FAILURE
    assert main(["verify", "--snapshot", str(snap), "--query", "bad..name"]) == EXIT_FAILURE
    bad = tmp_path / "bad.changes"
    bad.write_text("frobnicate went.net.\n")
    assert main(["update", "--snapshot", str(snap), "--changes", str(bad)]) == EXIT_FAILURE
    monkeypatch.setenv("DNSLEC_RL", "2")
    assert main(["verify", "--snapshot", str(snap)]) == EXIT_FAILURE


def test_parse_query():
    space = build_system(workflow_groups()).space
    assert parse_query(None, space) == space.full
    assert parse_query("*", space) == space.full
    where = names.from_text("where.went.com.")
    assert parse_query("where.went.com.:a", space) == space.get_space(where, ["A"], 0)
    assert parse_query("where.went.com.", space) == space.get_space(where, None, 0)
    assert parse_query("*:MX", space) == space.all_names(["MX"])
