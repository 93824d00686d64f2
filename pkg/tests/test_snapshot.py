import gzip
import json

import pytest

from dnslec.config import VerifierConfig
from dnslec.snapshot import FORMAT_VERSION, Snapshot, SnapshotError, load, save, to_document
from support import trace_signatures, workflow


def saved(tmp_path, with_tree=True):
    system, tree, _ = workflow()
    path = tmp_path / "wf.snap"
    save(Snapshot(system, VerifierConfig(), tree if with_tree else None, {"note": "x"}), path)
    return path


def test_round_trip_is_exact(tmp_path):
    path = saved(tmp_path)
    snap = load(path)
    again = tmp_path / "again.snap"
    save(snap, again)
    assert path.read_bytes() == again.read_bytes()
    assert snap.meta == {"note": "x"}
    assert len(snap.system.tables) == 3


def test_loaded_tree_matches_a_fresh_run(tmp_path):
    snap = load(saved(tmp_path))
    from dnslec.symexec import Executor

    fresh = Executor(snap.system, loop_mode=snap.tree.loop_mode).run()
    assert trace_signatures(snap.tree) == trace_signatures(fresh)


def test_snapshot_without_tree(tmp_path):
    assert load(saved(tmp_path, with_tree=False)).tree is None


def test_mismatched_encoding_is_refused(tmp_path):
    path = saved(tmp_path)
    with pytest.raises(SnapshotError, match="rl=4"):
        load(path, VerifierConfig(rl=2))
    assert load(path, VerifierConfig(fuel=3)).system


def test_corrupt_and_foreign_files(tmp_path):
    with pytest.raises(SnapshotError):
        load(tmp_path / "absent.snap")
    junk = tmp_path / "junk.snap"
    junk.write_bytes(b"not gzip")
    with pytest.raises(SnapshotError):
        load(junk)
    system, tree, _ = workflow()
    doc = to_document(Snapshot(system, VerifierConfig(), tree))
    for key, value in (("format", "other"), ("format_version", FORMAT_VERSION + 1), ("config_hash", "0")):
        bad = dict(doc, **{key: value})
        path = tmp_path / f"{key}.snap"
        path.write_bytes(gzip.compress(json.dumps(bad).encode()))
        with pytest.raises(SnapshotError):
            load(path)
