"""Single-file persistence for a built system and its last execution tree.

The file is gzip-compressed JSON.  All predicates of the system and the
tree share one node table, written by PredicateCodec, so a snapshot loads
into a fresh manager with the same variable layout and every predicate
comes back identical.
"""

from __future__ import annotations

import gzip
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from . import names
from .config import VerifierConfig
from .ingest import ResourceRecord
from .lec import (
    NONEXIST,
    REFUSE,
    Action,
    ActionType,
    NameserverTable,
    Rule,
    RuleSpec,
    System,
    ZoneTable,
    group_records,
)
from .space import LabelCodec, PredicateCodec, QuerySpace, load_node_table
from .symexec import ExecNode, ExecTree, Log, Trace

FORMAT = "dnslec-snapshot"
FORMAT_VERSION = 1


class SnapshotError(ValueError):
    pass


@dataclass
class Snapshot:
    system: System
    config: VerifierConfig
    tree: ExecTree | None = None
    meta: dict[str, Any] | None = None


# ---------------------------------------------------------------------------
# writing


def _rule_json(rule: Rule, ref) -> dict:
    out = {"hit": ref(rule.hit), "bdd": ref(rule.bdd), "action": rule.action.to_json()}
    if rule.spec is not None:
        s = rule.spec
        out["spec"] = [names.to_text(s.rname), s.rtype, s.rank, s.atype.value]
    return out


def _system_json(system: System, ref) -> list[dict]:
    out = []
    for name, table in system.tables.items():
        zones = []
        for z in table.zones:
            zones.append(
                {
                    "origin": z.label,
                    "source_path": z.source_path,
                    "hit": ref(z.hit),
                    "bdd": ref(z.bdd),
                    "records": [[names.to_text(r.rname), r.rtype, r.rdata] for r in z.records],
                    "rules": [_rule_json(r, ref) for r in z.rules],
                    "nx": _rule_json(z.nx_rule, ref),
                }
            )
        out.append({"name": name, "zones": zones, "refuse": _rule_json(table.refuse_rule, ref)})
    return out


def _tree_json(tree: ExecTree, ref) -> dict:
    log_ids: dict[int, int] = {}
    logs: list[dict] = []

    def log_ref(log: Log) -> int:
        key = id(log)
        if key not in log_ids:
            log_ids[key] = len(logs)
            logs.append(
                {
                    "q_in": ref(log.q_in),
                    "q_out": ref(log.q_out),
                    "nameserver": log.nameserver,
                    "zone": log.zone,
                    "rule": list(log.rule) if log.rule is not None else None,
                    "action": log.action.to_json(),
                    "evidence": ref(log.evidence) if log.evidence is not None else None,
                }
            )
        return log_ids[key]

    def node_json(node: ExecNode) -> dict:
        children = []
        for c in node.children:
            if isinstance(c, Trace):
                children.append({"trace": [log_ref(x) for x in c.logs], "version": c.version})
            else:
                children.append(node_json(c))
        return {
            "kind": node.kind,
            "nameserver": node.nameserver,
            "q": ref(node.q),
            "hist": [log_ref(x) for x in node.hist],
            "fuel": node.fuel,
            "prefix": names.to_text(node.prefix) if node.prefix is not None else None,
            "children": children,
        }

    root = node_json(tree.root)
    # drop the self-referencing closure so predicates do not outlive the manager
    del node_json
    return {
        "root": root,
        "logs": logs,
        "query": ref(tree.query),
        "entries": list(tree.entries) if tree.entries is not None else None,
        "fuel": tree.fuel,
        "prefix_filter": tree.prefix_filter,
        "loop_mode": tree.loop_mode,
        "version": tree.version,
    }


def to_document(snap: Snapshot) -> dict:
    system = snap.system
    codec = PredicateCodec(system.space)
    doc = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "config": snap.config.to_dict(),
        "config_hash": snap.config.encoding_hash(),
        "system_version": system.version,
        "build_seconds": system.build_seconds,
        "codec": system.codec.to_dict(),
        "nameservers": _system_json(system, codec.ref),
        "tree": _tree_json(snap.tree, codec.ref) if snap.tree is not None else None,
        "meta": snap.meta or {},
    }
    doc["predicates"] = codec.dump()
    return doc


def save(snap: Snapshot, path: str | Path) -> None:
    path = Path(path)
    data = json.dumps(to_document(snap), separators=(",", ":")).encode()
    fd, tmp = tempfile.mkstemp(prefix=path.name, dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
            gz.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# reading


def _rule_from(data: dict, preds: list, kind: str = "record") -> Rule:
    spec = None
    if "spec" in data:
        rname, rtype, rank, atype = data["spec"]
        spec = RuleSpec(names.from_text(rname), rtype, rank, ActionType(atype))
    action = Action.from_json(data["action"])
    if kind == "nx":
        action = NONEXIST
    elif kind == "refuse":
        action = REFUSE
    return Rule(preds[data["hit"]], preds[data["bdd"]], action, spec, kind)


def _system_from(doc: dict, space: QuerySpace, preds: list) -> System:
    tables = {}
    for ns in doc["nameservers"]:
        zones = []
        for z in ns["zones"]:
            origin = names.from_text(z["origin"])
            records = [ResourceRecord(names.from_text(r), t, d) for r, t, d in z["records"]]
            zones.append(
                ZoneTable(
                    origin=origin,
                    hit=preds[z["hit"]],
                    bdd=preds[z["bdd"]],
                    rules=[_rule_from(r, preds) for r in z["rules"]],
                    nx_rule=_rule_from(z["nx"], preds, "nx"),
                    records=records,
                    groups=group_records(records),
                    source_path=z["source_path"],
                )
            )
        tables[ns["name"]] = NameserverTable(ns["name"], zones, _rule_from(ns["refuse"], preds, "refuse"))
    return System(space, tables, doc["system_version"], dict(doc.get("build_seconds", {})))


def _tree_from(data: dict, preds: list) -> ExecTree:
    logs = []
    for x in data["logs"]:
        logs.append(
            Log(
                preds[x["q_in"]],
                preds[x["q_out"]],
                x["nameserver"],
                x["zone"],
                tuple(x["rule"]) if x["rule"] is not None else None,
                Action.from_json(x["action"]),
                preds[x["evidence"]] if x["evidence"] is not None else None,
            )
        )

    def node_from(d: dict) -> ExecNode:
        node = ExecNode(
            d["kind"],
            d["nameserver"],
            preds[d["q"]],
            tuple(logs[i] for i in d["hist"]),
            d["fuel"],
            names.from_text(d["prefix"]) if d["prefix"] is not None else None,
        )
        for c in d["children"]:
            if "trace" in c:
                node.children.append(Trace(tuple(logs[i] for i in c["trace"]), c["version"]))
            else:
                node.children.append(node_from(c))
        return node

    entries = data["entries"]
    root = node_from(data["root"])
    del node_from
    return ExecTree(
        root,
        preds[data["query"]],
        tuple(entries) if entries is not None else None,
        data["fuel"],
        data["prefix_filter"],
        data["loop_mode"],
        data["version"],
    )


def ensure_compatible(stored: VerifierConfig, expect: VerifierConfig) -> None:
    """Refuse settings that would need a different label coding than the snapshot's."""
    if stored.encoding_hash() != expect.encoding_hash():
        raise SnapshotError(
            "snapshot was built with "
            f"rl={stored.rl}, d_share={stored.d_share} but the current settings ask for "
            f"rl={expect.rl}, d_share={expect.d_share}; rebuild it with 'dnslec build' or drop the overrides"
        )


def from_document(doc: dict, expect: VerifierConfig | None = None) -> Snapshot:
    if doc.get("format") != FORMAT:
        raise SnapshotError("not a dnslec snapshot")
    if doc.get("format_version") != FORMAT_VERSION:
        raise SnapshotError(f"snapshot format {doc.get('format_version')} is not supported (want {FORMAT_VERSION})")
    stored = VerifierConfig.from_mapping(doc["config"])
    if stored.encoding_hash() != doc["config_hash"]:
        raise SnapshotError("snapshot config hash does not match its own config; the file is corrupt")
    if expect is not None:
        ensure_compatible(stored, expect)
    codec = LabelCodec.from_dict(doc["codec"])
    space = QuerySpace(codec)
    preds = load_node_table(space, doc["predicates"])
    system = _system_from(doc, space, preds)
    tree = _tree_from(doc["tree"], preds) if doc.get("tree") else None
    return Snapshot(system, stored, tree, doc.get("meta") or {})


def load(path: str | Path, expect: VerifierConfig | None = None) -> Snapshot:
    path = Path(path)
    try:
        with gzip.open(path, "rb") as fh:
            doc = json.loads(fh.read())
    except FileNotFoundError:
        raise SnapshotError(f"snapshot not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"{path}: unreadable snapshot ({exc})") from None
    return from_document(doc, expect)
