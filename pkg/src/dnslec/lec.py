"""Per-nameserver match-action tables (local equivalence classes)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from . import names
from .ingest import ResourceRecord, Zonefile
from .names import Name
from .space import LabelCodec, Predicate, QuerySpace, encode_labels

RANK_CEILING = 512
NX_RANK = -1
REFUSE_RANK = -2


class ActionType(str, Enum):
    ANSWER = "Answer"
    DELEGATE = "Delegate"
    REWRITE_C = "RewriteC"
    REWRITE_D = "RewriteD"
    REFUSE = "Refuse"
    NONEXIST = "NonExist"
    SERVICE_FAIL = "ServiceFail"
    LOOP = "Loop"
    MAX_LENGTH = "MaxLength"

    def __str__(self) -> str:
        return self.value


TERMINAL = frozenset(
    {
        ActionType.ANSWER,
        ActionType.REFUSE,
        ActionType.NONEXIST,
        ActionType.SERVICE_FAIL,
        ActionType.LOOP,
        ActionType.MAX_LENGTH,
    }
)
REWRITES = frozenset({ActionType.REWRITE_C, ActionType.REWRITE_D})


class RankUnderflow(ValueError):
    pass


class DuplicateOrigin(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    """What a nameserver does with a query.

    ``adata`` is the comparable payload; ``rname`` records which owner name
    produced the action and is deliberately left out of equality so that
    identical behaviour at different names merges into one class.

    Payload per type: Answer ``(rtype, rdatas)``; Delegate ``(targets,
    glue)``; RewriteC ``(target,)``; RewriteD ``(source, target)``.
    """

    atype: ActionType
    adata: tuple = ()
    rname: Name | None = field(default=None, compare=False)

    @property
    def is_terminal(self) -> bool:
        return self.atype in TERMINAL

    @property
    def targets(self) -> tuple[str, ...]:
        return self.adata[0] if self.atype is ActionType.DELEGATE else ()

    @property
    def glue(self) -> tuple[tuple[str, str, str], ...]:
        return self.adata[1] if self.atype is ActionType.DELEGATE else ()

    @property
    def rewrite_target(self) -> Name:
        if self.atype is ActionType.REWRITE_C:
            return names.from_text(self.adata[0])
        if self.atype is ActionType.REWRITE_D:
            return names.from_text(self.adata[1])
        raise ValueError(f"{self.atype} is not a rewrite")

    def to_json(self) -> dict:
        out: dict = {"atype": self.atype.value}
        if self.rname is not None:
            out["rname"] = names.to_text(self.rname)
        if self.atype is ActionType.ANSWER:
            out["rtype"], out["rdata"] = self.adata[0], list(self.adata[1])
        elif self.atype is ActionType.DELEGATE:
            out["targets"] = list(self.adata[0])
            out["glue"] = [list(g) for g in self.adata[1]]
        elif self.atype is ActionType.REWRITE_C:
            out["target"] = self.adata[0]
        elif self.atype is ActionType.REWRITE_D:
            out["source"], out["target"] = self.adata
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Action":
        atype = ActionType(data["atype"])
        rname = names.from_text(data["rname"]) if "rname" in data else None
        if atype is ActionType.ANSWER:
            adata: tuple = (data["rtype"], tuple(data["rdata"]))
        elif atype is ActionType.DELEGATE:
            adata = (tuple(data["targets"]), tuple(tuple(g) for g in data["glue"]))
        elif atype is ActionType.REWRITE_C:
            adata = (data["target"],)
        elif atype is ActionType.REWRITE_D:
            adata = (data["source"], data["target"])
        else:
            adata = ()
        return cls(atype, adata, rname)

    def __str__(self) -> str:
        return f"{self.atype.value}{self.adata if self.adata else ''}"


NONEXIST = Action(ActionType.NONEXIST)
REFUSE = Action(ActionType.REFUSE)


def rank(record: ResourceRecord, origin: Name) -> tuple[int, int | None]:
    """Priority of the rule a record produces, plus its companion rule's priority."""
    depth = len(record.rname)
    if record.rtype == "NS" and record.rname != origin:
        value = RANK_CEILING - 2 * depth
        if value <= 3:
            raise RankUnderflow(f"rank {value} collides with the low band")
        return value, None
    if record.rtype == "DNAME":
        value = RANK_CEILING - 2 * depth - 1
        if value <= 3:
            raise RankUnderflow(f"rank {value} collides with the low band")
        return value, 2
    is_cname = record.rtype == "CNAME"
    value = 2 * (not names.is_wildcard(record.rname)) + int(is_cname)
    return value, (value - 1 if is_cname else None)


@dataclass(frozen=True)
class RuleSpec:
    """A rule before any predicate is attached; shared with the concrete resolver."""

    rname: Name
    rtype: str
    rank: int
    atype: ActionType

    @property
    def key(self) -> tuple[str, str, int]:
        return (names.to_text(self.rname), self.rtype, self.rank)

    @property
    def sort_key(self) -> tuple:
        return (-self.rank, -len(self.rname), names.to_text(self.rname), self.rtype)


def specs_for(origin: Name, rname: Name, rtype: str) -> list[RuleSpec]:
    primary, companion = rank(ResourceRecord(rname, rtype, ""), origin)
    if rtype == "NS" and rname != origin:
        atype = ActionType.DELEGATE
    elif rtype == "DNAME":
        atype = ActionType.REWRITE_D
    elif rtype == "CNAME":
        atype = ActionType.REWRITE_C
    else:
        atype = ActionType.ANSWER
    out = [RuleSpec(rname, rtype, primary, atype)]
    if companion is not None:
        out.append(RuleSpec(rname, rtype, companion, ActionType.ANSWER))
    return out


RecordGroups = dict[tuple[Name, str], list[str]]


def group_records(records: Iterable[ResourceRecord]) -> RecordGroups:
    groups: RecordGroups = {}
    for rec in records:
        bucket = groups.setdefault((rec.rname, rec.rtype), [])
        if rec.rdata not in bucket:
            bucket.append(rec.rdata)
    return groups


def zone_specs(origin: Name, groups: Mapping[tuple[Name, str], list[str]]) -> list[RuleSpec]:
    specs = [s for (rname, rtype) in groups for s in specs_for(origin, rname, rtype)]
    specs.sort(key=lambda s: s.sort_key)
    return specs


def glue_for(targets: Iterable[str], groups: Mapping[tuple[Name, str], list[str]]) -> tuple:
    glue = []
    for target in targets:
        tname = names.from_text(target)
        for rtype in ("A", "AAAA"):
            for rdata in groups.get((tname, rtype), ()):
                glue.append((target, rtype, rdata))
    return tuple(sorted(glue))


def make_action(spec: RuleSpec, groups: Mapping[tuple[Name, str], list[str]]) -> Action:
    rdatas = groups[(spec.rname, spec.rtype)]
    if spec.atype is ActionType.DELEGATE:
        targets = tuple(sorted(set(rdatas)))
        return Action(ActionType.DELEGATE, (targets, glue_for(targets, groups)), spec.rname)
    if spec.atype is ActionType.REWRITE_C:
        return Action(ActionType.REWRITE_C, (rdatas[0],), spec.rname)
    if spec.atype is ActionType.REWRITE_D:
        return Action(ActionType.REWRITE_D, (names.to_text(spec.rname), rdatas[0]), spec.rname)
    return Action(ActionType.ANSWER, (spec.rtype, tuple(sorted(rdatas))), spec.rname)


def hit_for(spec: RuleSpec, space: QuerySpace) -> Predicate:
    if spec.atype is ActionType.DELEGATE:
        return space.get_space(spec.rname, None, 1)
    if spec.atype is ActionType.REWRITE_D:
        return space.get_space(spec.rname, None, 2)
    if spec.atype is ActionType.REWRITE_C:
        return space.get_space(spec.rname, space.types_except("CNAME"), 0)
    return space.get_space(spec.rname, [spec.rtype], 0)


@dataclass(eq=False)
class Rule:
    hit: Predicate
    bdd: Predicate
    action: Action
    spec: RuleSpec | None = None
    kind: str = "record"  # "record", "nx" or "refuse"

    @property
    def rank(self) -> int:
        if self.spec is not None:
            return self.spec.rank
        return NX_RANK if self.kind == "nx" else REFUSE_RANK

    @property
    def key(self) -> tuple:
        if self.spec is not None:
            return self.spec.key
        return ("NX",) if self.kind == "nx" else ("REFUSE",)

    @property
    def source(self) -> Name | None:
        """Owner name used by the prefix filter; None for catch-all rules."""
        return None if self.spec is None else names.base(self.spec.rname)


@dataclass(eq=False)
class ZoneTable:
    origin: Name
    hit: Predicate
    bdd: Predicate
    rules: list[Rule]
    nx_rule: Rule
    records: list[ResourceRecord]
    groups: RecordGroups
    source_path: str = "<memory>"

    @property
    def zone_rank(self) -> int:
        return len(self.origin)

    @property
    def sort_key(self) -> tuple:
        return (-len(self.origin), names.to_text(self.origin))

    @property
    def label(self) -> str:
        return names.to_text(self.origin)

    def all_rules(self) -> list[Rule]:
        return self.rules + [self.nx_rule]

    def rule(self, key: tuple) -> Rule | None:
        for r in self.all_rules():
            if r.key == key:
                return r
        return None

    def zonefile(self) -> Zonefile:
        return Zonefile(self.origin, tuple(self.records), self.source_path)


@dataclass(eq=False)
class NameserverTable:
    name: str
    zones: list[ZoneTable]
    refuse_rule: Rule

    def zone(self, origin: Name) -> ZoneTable | None:
        for z in self.zones:
            if z.origin == origin:
                return z
        return None

    def all_rules(self) -> list[Rule]:
        return [r for z in self.zones for r in z.all_rules()] + [self.refuse_rule]

    def rule_count(self) -> int:
        return sum(len(z.rules) for z in self.zones)

    def origins(self) -> list[Name]:
        return [z.origin for z in self.zones]


def zone_lecs(zonefile: Zonefile, remain: Predicate, space: QuerySpace) -> tuple[list[Rule], Rule]:
    """Split the zone's allotted space ``remain`` among its records by rank."""
    groups = group_records(zonefile.records)
    rules = []
    for spec in zone_specs(zonefile.origin, groups):
        hit = hit_for(spec, space)
        bdd = hit & remain
        remain = remain & ~bdd
        rules.append(Rule(hit, bdd, make_action(spec, groups), spec))
    nx = Rule(space.get_space(zonefile.origin, None, 1), remain, NONEXIST, None, "nx")
    return rules, nx


def build_zone(zonefile: Zonefile, remain: Predicate, space: QuerySpace) -> ZoneTable:
    hit = space.get_space(zonefile.origin, None, 1)
    bdd = hit & remain
    rules, nx = zone_lecs(zonefile, bdd, space)
    return ZoneTable(
        origin=zonefile.origin,
        hit=hit,
        bdd=bdd,
        rules=rules,
        nx_rule=nx,
        records=list(zonefile.records),
        groups=group_records(zonefile.records),
        source_path=zonefile.source_path,
    )


def construct_lecs(zonefiles: Iterable[Zonefile], space: QuerySpace, name: str = "") -> NameserverTable:
    """Build a complete, mutually exclusive table for one nameserver."""
    zonefiles = list(zonefiles)
    seen: set[Name] = set()
    for zf in zonefiles:
        if zf.origin in seen:
            raise DuplicateOrigin(f"{name}: two zonefiles with origin {names.to_text(zf.origin)}")
        seen.add(zf.origin)
    ordered = sorted(zonefiles, key=lambda zf: (-len(zf.origin), names.to_text(zf.origin)))
    remain = space.full
    zones = []
    for zf in ordered:
        zone = build_zone(zf, remain, space)
        remain = remain & ~zone.bdd
        zones.append(zone)
    return NameserverTable(name, zones, Rule(space.full, remain, REFUSE, None, "refuse"))


def minimize_lecs(table: NameserverTable, space: QuerySpace) -> list[tuple[Predicate, Action]]:
    """Merge every claimed space with the same action into one class."""
    merged: dict[Action, Predicate] = {}
    for rule in table.all_rules():
        if rule.bdd == space.false:
            continue
        merged[rule.action] = merged.get(rule.action, space.false) | rule.bdd
    return [(pred, action) for action, pred in merged.items()]


def check_table(table: NameserverTable, space: QuerySpace) -> list[str]:
    """Return every violated table invariant (empty when the table is sound)."""
    problems = []
    union = space.false
    for zone in table.zones:
        zunion = space.false
        for rule in zone.all_rules():
            if rule.bdd & ~rule.hit != space.false:
                problems.append(f"{table.name}/{zone.label}: {rule.key} claims space outside its hit")
            if rule.bdd & zunion != space.false:
                problems.append(f"{table.name}/{zone.label}: {rule.key} overlaps an earlier rule")
            zunion |= rule.bdd
        if zunion != zone.bdd:
            problems.append(f"{table.name}/{zone.label}: rule spaces do not add up to the zone space")
        if zone.bdd & union != space.false:
            problems.append(f"{table.name}/{zone.label}: zone overlaps another zone")
        union |= zone.bdd
    if table.refuse_rule.bdd & union != space.false:
        problems.append(f"{table.name}: refuse space overlaps a zone")
    if union | table.refuse_rule.bdd != space.full:
        problems.append(f"{table.name}: table is not complete")
    return problems


def check_minimal(classes: list[tuple[Predicate, Action]], space: QuerySpace, table: NameserverTable) -> list[str]:
    """Check the four minimal-set constraints against the table it came from."""
    problems = []
    union = space.false
    actions = [a for _, a in classes]
    if len(set(actions)) != len(actions):
        problems.append(f"{table.name}: two classes share an action")
    for pred, action in classes:
        if pred == space.false:
            problems.append(f"{table.name}: empty class for {action}")
        if pred & union != space.false:
            problems.append(f"{table.name}: classes overlap")
        union |= pred
    if union != space.full:
        problems.append(f"{table.name}: classes do not cover the query space")
    by_action = dict((a, p) for p, a in classes)
    for rule in table.all_rules():
        if rule.bdd == space.false:
            continue
        cls = by_action.get(rule.action)
        if cls is None or rule.bdd & ~cls != space.false:
            problems.append(f"{table.name}: rule {rule.key} is not inside the class of its action")
    return problems


@dataclass(eq=False)
class System:
    """All nameserver tables sharing one query space."""

    space: QuerySpace
    tables: dict[str, NameserverTable]
    version: int = 0
    build_seconds: dict[str, float] = field(default_factory=dict)

    @property
    def codec(self) -> LabelCodec:
        return self.space.codec

    def table(self, name: str) -> NameserverTable | None:
        return self.tables.get(name)

    def zonefiles(self) -> dict[str, list[Zonefile]]:
        return {name: [z.zonefile() for z in t.zones] for name, t in self.tables.items()}


def all_records(groups: Mapping[str, Iterable[Zonefile]]) -> list[ResourceRecord]:
    return [rec for zones in groups.values() for zf in zones for rec in zf.records]


def build_system(
    groups: Mapping[str, Iterable[Zonefile]],
    rl: int = 4,
    d_share: int | str = "auto",
    codec: LabelCodec | None = None,
    space: QuerySpace | None = None,
) -> System:
    """Encode labels over every record, then build one table per nameserver."""
    groups = {name: list(zones) for name, zones in groups.items()}
    if space is None:
        if codec is None:
            codec = encode_labels(all_records(groups), rl, d_share)
        space = QuerySpace(codec)
    tables = {}
    timings = {}
    for name, zones in groups.items():
        start = time.perf_counter()
        tables[name] = construct_lecs(zones, space, name)
        timings[name] = time.perf_counter() - start
    return System(space, tables, 0, timings)


def diff_systems(a: System, b: System) -> list[str]:
    """Differences between two systems built over the same query space."""
    out = []
    if set(a.tables) != set(b.tables):
        return [f"nameserver sets differ: {sorted(set(a.tables) ^ set(b.tables))}"]
    for name, ta in a.tables.items():
        tb = b.tables[name]
        if [z.origin for z in ta.zones] != [z.origin for z in tb.zones]:
            out.append(f"{name}: zone lists differ")
            continue
        for za, zb in zip(ta.zones, tb.zones):
            if za.bdd != zb.bdd:
                out.append(f"{name}/{za.label}: zone space differs")
            ra, rb = za.all_rules(), zb.all_rules()
            if [r.key for r in ra] != [r.key for r in rb]:
                out.append(f"{name}/{za.label}: rule lists differ")
                continue
            for x, y in zip(ra, rb):
                if x.bdd != y.bdd or x.action != y.action or x.hit != y.hit:
                    out.append(f"{name}/{za.label}: rule {x.key} differs")
            if {k: set(v) for k, v in za.groups.items()} != {k: set(v) for k, v in zb.groups.items()}:
                out.append(f"{name}/{za.label}: record groups differ")
        if ta.refuse_rule.bdd != tb.refuse_rule.bdd:
            out.append(f"{name}: refuse space differs")
        ma = {act: p for p, act in minimize_lecs(ta, a.space)}
        mb = {act: p for p, act in minimize_lecs(tb, b.space)}
        if ma != mb:
            out.append(f"{name}: minimal classes differ")
    return out
