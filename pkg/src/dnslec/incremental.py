"""Incremental table updates and partial re-execution.

Tables are patched in place by priority preemption: an added rule takes
whatever part of its hit the lower-ranked rules currently own, and a
deleted rule's space flows down to the next lower rule whose hit covers
it.  Zonefiles are handled the same way one tier up, with the refuse rule
as the lowest zone.  Each change reports the query space it touched, and
``incremental_verify`` re-expands only the execution-tree nodes whose query
set meets that space.
"""

from __future__ import annotations

import bisect
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from . import names
from .config import VerifierConfig
from .ingest import SINGLETON_TYPES, ParseError, ResourceRecord, Zonefile, parse_record, read_zonefile
from .lec import (
    ActionType,
    DuplicateOrigin,
    NameserverTable,
    Rule,
    System,
    ZoneTable,
    build_zone,
    hit_for,
    make_action,
    specs_for,
)
from .names import Name
from .properties import Report, check_all, forget
from .space import LabelCodec, Predicate, QuerySpace, RebuildRequired
from .symexec import ExecNode, ExecTree, Executor


class ChangeError(ValueError):
    pass


class RecordNotFound(ChangeError, LookupError):
    pass


@dataclass(frozen=True)
class AddRecord:
    zone: Name
    record: ResourceRecord
    nameserver: str | None = None


@dataclass(frozen=True)
class DeleteRecord:
    zone: Name
    record: ResourceRecord
    nameserver: str | None = None


@dataclass(frozen=True)
class AddZonefile:
    nameserver: str
    zonefile: Zonefile


@dataclass(frozen=True)
class DeleteZonefile:
    nameserver: str
    origin: Name


Change = AddRecord | DeleteRecord | AddZonefile | DeleteZonefile


@dataclass
class Impact:
    """What one nameserver's table lost or gained.

    ``space`` covers every rule, zone and refuse bdd delta and every rule
    whose action changed; ``refuse`` is the refuse-rule delta on its own;
    ``zones`` names the zones whose record groups changed.
    """

    space: Predicate
    refuse: Predicate
    zones: set[str] = field(default_factory=set)

    def merge(self, other: "Impact") -> None:
        self.space |= other.space
        self.refuse |= other.refuse
        self.zones |= other.zones


@dataclass
class ChangeResult:
    impacts: dict[str, Impact]
    from_version: int
    to_version: int
    seconds: float = 0.0

    def is_empty(self, space: QuerySpace) -> bool:
        return all(i.space == space.false and not i.zones for i in self.impacts.values())


# ---------------------------------------------------------------------------
# changeset files


def parse_changeset(text: str, base_dir: str | Path = ".") -> list[Change]:
    """Read the line format used by ``dnslec update``.

    ``add|del ORIGIN[@NAMESERVER] RECORD`` edits one record (the record in
    master-file syntax, relative names resolved against ORIGIN);
    ``addzone NAMESERVER PATH`` and ``delzone NAMESERVER ORIGIN`` edit whole
    zonefiles.  Blank lines and ``;`` or ``#`` comments are skipped.
    """
    base_dir = Path(base_dir)
    out: list[Change] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in ";#":
            continue
        parts = line.split(None, 2)
        verb = parts[0].lower()
        try:
            if verb in ("add", "del"):
                if len(parts) < 3:
                    raise ChangeError(f"{verb} needs a zone and a record")
                zone_text, _, ns = parts[1].partition("@")
                origin = names.from_text(zone_text)
                rec = parse_record(parts[2], origin)
                cls = AddRecord if verb == "add" else DeleteRecord
                out.append(cls(origin, rec, _ns_name(ns) if ns else None))
            elif verb == "addzone":
                ns, path = line.split(None, 2)[1:]
                path = Path(path)
                if not path.is_absolute():
                    path = base_dir / path
                out.append(AddZonefile(_ns_name(ns), read_zonefile(path)))
            elif verb == "delzone":
                _, ns, origin = line.split()
                out.append(DeleteZonefile(_ns_name(ns), names.from_text(origin)))
            else:
                raise ChangeError(f"unknown operation {parts[0]!r}")
        except (ParseError, ChangeError, ValueError) as exc:
            raise ChangeError(f"line {lineno}: {exc}") from None
    return out


def read_changeset(path: str | Path) -> list[Change]:
    path = Path(path)
    return parse_changeset(path.read_text(encoding="utf-8"), path.parent)


def _ns_name(text: str) -> str:
    return names.to_text(names.from_text(text))


# ---------------------------------------------------------------------------
# rule tier


def _related(a: Rule, source: Name | None) -> bool:
    return a.source is None or source is None or names.related(a.source, source)


def _take_from(rules: Iterable[Rule], target: Predicate, source: Name | None, space: QuerySpace, optimize: bool) -> Predicate:
    """Strip ``target`` from ``rules`` and return the part they owned."""
    rules = list(rules)
    if not optimize:
        owned = space.false
        for r in rules:
            owned |= r.bdd
        taken = target & owned
        for r in rules:
            r.bdd = r.bdd & ~taken
        return taken
    taken = space.false
    for r in rules:
        if not _related(r, source):
            continue
        part = r.bdd & target
        if part == space.false:
            continue
        r.bdd = r.bdd & ~part
        taken |= part
        if taken == target:
            break
    return taken


def _release_to(rules: Iterable[Rule], released: Predicate, source: Name | None, space: QuerySpace, optimize: bool) -> Predicate:
    """Hand ``released`` to the first rule (in order) whose hit covers each part; return the leftover."""
    if not optimize:
        higher = space.false
        for r in rules:
            r.bdd = r.bdd | (r.hit & released & ~higher)
            higher |= r.hit
        return released & ~higher
    left = released
    for r in rules:
        if left == space.false:
            break
        if not _related(r, source):
            continue
        part = r.hit & left
        if part == space.false:
            continue
        r.bdd = r.bdd | part
        left = left & ~part
    return left


def _insert_rule(zone: ZoneTable, rule: Rule, space: QuerySpace, optimize: bool) -> Predicate:
    keys = [r.spec.sort_key for r in zone.rules]
    pos = bisect.bisect_right(keys, rule.spec.sort_key)
    lower = zone.rules[pos:] + [zone.nx_rule]
    rule.bdd = _take_from(lower, rule.hit & zone.bdd, rule.source, space, optimize)
    zone.rules.insert(pos, rule)
    return rule.bdd


def _remove_rule(zone: ZoneTable, rule: Rule, space: QuerySpace, optimize: bool) -> Predicate:
    pos = zone.rules.index(rule)
    del zone.rules[pos]
    lower = zone.rules[pos:] + [zone.nx_rule]
    left = _release_to(lower, rule.bdd, rule.source, space, optimize)
    assert left == space.false, "nx rule must absorb every released query"
    return rule.bdd


def _refresh_actions(zone: ZoneTable, rname: Name, rtype: str, space: QuerySpace) -> Predicate:
    """Recompute actions that depend on the ``(rname, rtype)`` group; return the space whose action changed."""
    touched = space.false
    glue_name = names.to_text(rname) if rtype in ("A", "AAAA") else None
    for rule in zone.rules:
        spec = rule.spec
        own = spec.rname == rname and spec.rtype == rtype
        glue = glue_name is not None and rule.action.atype is ActionType.DELEGATE and glue_name in rule.action.targets
        if not (own or glue):
            continue
        new = make_action(spec, zone.groups)
        if new != rule.action:
            rule.action = new
            touched |= rule.bdd
    return touched


def _check_addable(zone: ZoneTable, rec: ResourceRecord) -> None:
    if not names.is_under(rec.rname, zone.origin):
        raise ChangeError(f"{names.to_text(rec.rname)} is outside zone {zone.label}")
    if rec.rtype == "SOA" and rec.rname != zone.origin:
        raise ChangeError("SOA must sit at the zone origin")
    if rec.rtype == "DNAME" and names.is_wildcard(rec.rname):
        raise ChangeError("DNAME owner may not be a wildcard")
    if rec.rtype in SINGLETON_TYPES:
        held = zone.groups.get((rec.rname, rec.rtype), [])
        if held and rec.rdata not in held:
            raise ChangeError(f"{names.to_text(rec.rname)} already has a {rec.rtype} record")


def _zone_add_record(zone: ZoneTable, rec: ResourceRecord, space: QuerySpace, optimize: bool) -> Predicate:
    _check_addable(zone, rec)
    key = (rec.rname, rec.rtype)
    zone.records.append(rec)
    bucket = zone.groups.get(key)
    if bucket is not None:
        if rec.rdata in bucket:
            return space.false
        bucket.append(rec.rdata)
        return _refresh_actions(zone, rec.rname, rec.rtype, space)
    zone.groups[key] = [rec.rdata]
    impact = space.false
    for spec in specs_for(zone.origin, rec.rname, rec.rtype):
        rule = Rule(hit_for(spec, space), space.false, make_action(spec, zone.groups), spec)
        impact |= _insert_rule(zone, rule, space, optimize)
    # a new address record may be glue for a delegation in this zone
    return impact | _refresh_actions(zone, rec.rname, rec.rtype, space)


def _zone_delete_record(zone: ZoneTable, rec: ResourceRecord, space: QuerySpace, optimize: bool) -> Predicate:
    if rec not in zone.records:
        raise RecordNotFound(f"{rec} is not in zone {zone.label}")
    zone.records.remove(rec)
    if rec in zone.records:
        return space.false
    key = (rec.rname, rec.rtype)
    bucket = zone.groups[key]
    bucket.remove(rec.rdata)
    if bucket:
        return _refresh_actions(zone, rec.rname, rec.rtype, space)
    del zone.groups[key]
    impact = space.false
    for rule in [r for r in zone.rules if r.spec.rname == rec.rname and r.spec.rtype == rec.rtype]:
        impact |= _remove_rule(zone, rule, space, optimize)
    return impact | _refresh_actions(zone, rec.rname, rec.rtype, space)


def _hosting(system: System, origin: Name, nameserver: str | None) -> list[NameserverTable]:
    if nameserver is not None:
        table = system.tables.get(nameserver)
        if table is None:
            raise ChangeError(f"unknown nameserver {nameserver}")
        if table.zone(origin) is None:
            raise ChangeError(f"{nameserver} does not serve zone {names.to_text(origin)}")
        return [table]
    found = [t for t in system.tables.values() if t.zone(origin) is not None]
    if not found:
        raise ChangeError(f"no nameserver serves zone {names.to_text(origin)}")
    return found


def apply_record_change(system: System, op: AddRecord | DeleteRecord, optimize: bool = True) -> dict[str, Impact]:
    """Patch every table hosting ``op.zone``; return the impact per nameserver."""
    space = system.space
    tables = _hosting(system, op.zone, op.nameserver)
    if isinstance(op, AddRecord):
        _trial(system.codec, [op.record])
        system.codec.absorb(op.record)
    out = {}
    for table in tables:
        zone = table.zone(op.zone)
        if isinstance(op, AddRecord):
            delta = _zone_add_record(zone, op.record, space, optimize)
        else:
            delta = _zone_delete_record(zone, op.record, space, optimize)
        out[table.name] = Impact(delta, space.false, {zone.label})
    return out


# ---------------------------------------------------------------------------
# zone tier


def _trial(codec: LabelCodec, records: Iterable[ResourceRecord]) -> None:
    """Raise RebuildRequired unless every record fits the codec together."""
    trial = LabelCodec.from_dict(codec.to_dict())
    for rec in records:
        trial.absorb(rec)


def _zone_related(zone: ZoneTable, origin: Name) -> bool:
    return names.related(zone.origin, origin)


def apply_zonefile_change(system: System, op: AddZonefile | DeleteZonefile, optimize: bool = True) -> dict[str, Impact]:
    space = system.space
    table = system.tables.get(op.nameserver)
    if table is None:
        raise ChangeError(f"unknown nameserver {op.nameserver}")
    if isinstance(op, AddZonefile):
        return {table.name: _add_zone(system, table, op.zonefile, optimize)}
    return {table.name: _delete_zone(table, op.origin, space, optimize)}


def _add_zone(system: System, table: NameserverTable, zf: Zonefile, optimize: bool) -> Impact:
    space = system.space
    if table.zone(zf.origin) is not None:
        raise DuplicateOrigin(f"{table.name} already serves {names.to_text(zf.origin)}")
    _trial(system.codec, zf.records)
    for rec in zf.records:
        system.codec.absorb(rec)
    hit = space.get_space(zf.origin, None, 1)
    sort_key = (-len(zf.origin), names.to_text(zf.origin))
    pos = bisect.bisect_right([z.sort_key for z in table.zones], sort_key)
    lower = table.zones[pos:]
    if optimize:
        taken = space.false
        for zone in lower:
            if taken == hit:
                break
            if not _zone_related(zone, zf.origin):
                continue
            part = zone.bdd & hit
            if part == space.false:
                continue
            _shrink_zone(zone, part, zf.origin, space, optimize)
            taken |= part
    else:
        owned = table.refuse_rule.bdd
        for zone in lower:
            owned |= zone.bdd
        taken = hit & owned
        for zone in lower:
            _shrink_zone(zone, taken, zf.origin, space, optimize)
    refused = table.refuse_rule.bdd & hit
    table.refuse_rule.bdd = table.refuse_rule.bdd & ~refused
    taken |= refused
    table.zones.insert(pos, build_zone(zf, taken, space))
    return Impact(taken, refused, {names.to_text(zf.origin)})


def _shrink_zone(zone: ZoneTable, part: Predicate, source: Name, space: QuerySpace, optimize: bool) -> None:
    zone.bdd = zone.bdd & ~part
    _take_from(zone.all_rules(), part, source, space, optimize)


def _delete_zone(table: NameserverTable, origin: Name, space: QuerySpace, optimize: bool) -> Impact:
    zone = table.zone(origin)
    if zone is None:
        raise ChangeError(f"{table.name} does not serve zone {names.to_text(origin)}")
    pos = table.zones.index(zone)
    del table.zones[pos]
    released = zone.bdd
    lower = table.zones[pos:]
    if optimize:
        left = released
        for z in lower:
            if left == space.false:
                break
            if not _zone_related(z, origin):
                continue
            part = z.hit & left
            if part == space.false:
                continue
            z.bdd = z.bdd | part
            _release_to(z.all_rules(), part, origin, space, optimize)
            left = left & ~part
    else:
        higher = space.false
        for z in lower:
            part = z.hit & released & ~higher
            z.bdd = z.bdd | part
            _release_to(z.all_rules(), part, origin, space, optimize)
            higher |= z.hit
        left = released & ~higher
    table.refuse_rule.bdd = table.refuse_rule.bdd | left
    return Impact(released, left, {zone.label})


# ---------------------------------------------------------------------------
# whole changesets


def _added_records(changes: Iterable[Change]) -> list[ResourceRecord]:
    out = []
    for op in changes:
        if isinstance(op, AddRecord):
            out.append(op.record)
        elif isinstance(op, AddZonefile):
            out.extend(op.zonefile.records)
    return out


def apply_changeset(system: System, changes: Iterable[Change], optimize: bool = True) -> ChangeResult:
    """Apply ``changes`` in order and bump the system version once.

    RebuildRequired is raised before anything is modified when the new
    records do not fit the current label coding.
    """
    changes = list(changes)
    start = time.perf_counter()
    _trial(system.codec, _added_records(changes))
    impacts: dict[str, Impact] = {}
    for op in changes:
        if isinstance(op, (AddRecord, DeleteRecord)):
            part = apply_record_change(system, op, optimize)
        else:
            part = apply_zonefile_change(system, op, optimize)
        for ns, imp in part.items():
            if ns in impacts:
                impacts[ns].merge(imp)
            else:
                impacts[ns] = imp
    before = system.version
    if changes:
        system.version += 1
    return ChangeResult(impacts, before, system.version, time.perf_counter() - start)


def apply_to_groups(groups: Mapping[str, Iterable[Zonefile]], changes: Iterable[Change]) -> dict[str, list[Zonefile]]:
    """The same edits applied to plain zonefile lists, for rebuilding from scratch."""
    out = {ns: list(zones) for ns, zones in groups.items()}

    def edit(ns: str, origin: Name, fn) -> None:
        zones = out[ns]
        for i, zf in enumerate(zones):
            if zf.origin == origin:
                zones[i] = Zonefile(zf.origin, tuple(fn(list(zf.records))), zf.source_path)
                return
        raise ChangeError(f"{ns} does not serve zone {names.to_text(origin)}")

    def delete(records: list, rec: ResourceRecord) -> list:
        if rec not in records:
            raise RecordNotFound(f"{rec} is not in the zone")
        records.remove(rec)
        return records

    for op in changes:
        if isinstance(op, (AddRecord, DeleteRecord)):
            hosts = [op.nameserver] if op.nameserver else [ns for ns, zs in out.items() if any(z.origin == op.zone for z in zs)]
            for ns in hosts:
                if isinstance(op, AddRecord):
                    edit(ns, op.zone, lambda recs, r=op.record: recs + [r])
                else:
                    edit(ns, op.zone, lambda recs, r=op.record: delete(recs, r))
        elif isinstance(op, AddZonefile):
            out[op.nameserver].append(op.zonefile)
        else:
            out[op.nameserver] = [z for z in out[op.nameserver] if z.origin != op.origin]
    return out


# ---------------------------------------------------------------------------
# re-verification


@dataclass
class VerifyResult:
    report: Report
    reexpanded: int
    replaced_traces: int
    full_rerun: bool
    seconds: float


def incremental_verify(
    system: System,
    tree: ExecTree,
    change: ChangeResult,
    config: VerifierConfig | None = None,
    properties: Iterable[str] | None = None,
) -> VerifyResult:
    """Bring ``tree`` up to date with ``system`` and re-check the changed traces.

    A node is recomputed when its query set meets the impact of the
    nameserver it runs at (or, for fan-out nodes, any refuse-rule delta).
    Its untouched siblings, and the histories leading to it, are reused.
    """
    start = time.perf_counter()
    config = config or VerifierConfig()
    space = system.space
    executor = Executor(system, tree.fuel, tree.prefix_filter, tree.loop_mode, tree.entries)
    full = tree.version != change.from_version
    reexpanded = 0
    if full:
        executor.expand(tree.root)
        reexpanded = 1
    elif change.to_version != change.from_version:
        refuse_any = space.false
        for imp in change.impacts.values():
            refuse_any |= imp.refuse
        stack = [tree.root]
        while stack:
            node = stack.pop()
            if node.kind == "at":
                imp = change.impacts.get(node.nameserver)
                stale = imp is not None and (node.q & imp.space) != space.false
            elif node.kind == "all":
                stale = (node.q & refuse_any) != space.false
            else:
                stale = False
            if stale:
                executor.expand(node)
                reexpanded += 1
            else:
                stack.extend(c for c in node.children if isinstance(c, ExecNode))
    tree.version = system.version

    changed_zones = {(ns, z) for ns, imp in change.impacts.items() for z in imp.zones}
    traces = tree.traces()
    replaced = 0
    for trace in traces:
        if trace.version == system.version and change.to_version != change.from_version:
            replaced += 1
            forget(trace)
        elif changed_zones and any((log.nameserver, log.zone) in changed_zones for log in trace.logs):
            # property checks read zone contents, not just the trace
            forget(trace)
    report = check_all(traces, system, config, properties, use_cache=not full)
    return VerifyResult(report, reexpanded, replaced, full, time.perf_counter() - start)


def report_delta(old: Report, new: Report) -> dict[str, list]:
    """Findings that disappeared or appeared, keyed by property and root cause."""
    before = {(f.property, f.key): f for f in old.findings}
    after = {(f.property, f.key): f for f in new.findings}
    return {
        "removed": [before[k] for k in before if k not in after],
        "added": [after[k] for k in after if k not in before],
    }
