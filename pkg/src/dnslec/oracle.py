"""Concrete reference resolver over a finite query universe.

It walks one query at a time through the same rank order the tables are
built from, but decides every match with plain name comparisons, so it
shares no predicate code with the symbolic side.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable, Mapping

from . import names
from .ingest import Zonefile
from .lec import Action, ActionType, RuleSpec, System, group_records, make_action, zone_specs
from .names import Name
from .space import OTHER_TYPE_WITNESS, LabelCodec
from .symexec import ExecTree, Trace


class UniverseTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ConcreteQuery:
    qname: Name
    qtype: str

    def __str__(self) -> str:
        return f"<{names.to_text(self.qname)} {self.qtype}>"


@dataclass(frozen=True)
class ConcreteStep:
    nameserver: str | None
    zone: str | None
    rule: tuple | None
    atype: ActionType
    qname: Name
    qtype: str
    out_name: Name | None = None
    action: Action | None = None

    @property
    def location(self) -> tuple:
        return (self.nameserver, self.zone, self.rule)


@dataclass(frozen=True)
class ConcreteRun:
    query: ConcreteQuery
    steps: tuple[ConcreteStep, ...]

    def signature(self) -> tuple:
        return tuple((s.location, s.atype) for s in self.steps)

    @property
    def terminal(self) -> ConcreteStep:
        return self.steps[-1]


def spec_matches(spec: RuleSpec, qname: Name, qtype: str) -> bool:
    base = names.base(spec.rname)
    wild = names.is_wildcard(spec.rname)
    if spec.atype is ActionType.DELEGATE:
        return names.is_strictly_under(qname, base) if wild else names.is_under(qname, base)
    if spec.atype is ActionType.REWRITE_D:
        return names.is_strictly_under(qname, spec.rname)
    same = names.is_strictly_under(qname, base) if wild else qname == spec.rname
    if spec.atype is ActionType.REWRITE_C:
        return same and qtype != "CNAME"
    return same and qtype == spec.rtype


@dataclass
class _Zone:
    origin: Name
    specs: list[RuleSpec]
    groups: dict


class ConcreteSystem:
    def __init__(self, groups: Mapping[str, Iterable[Zonefile]], max_labels: int):
        self.max_labels = max_labels
        self.servers: dict[str, list[_Zone]] = {}
        for ns, zonefiles in groups.items():
            zones = []
            for zf in sorted(zonefiles, key=lambda z: (-len(z.origin), names.to_text(z.origin))):
                g = group_records(zf.records)
                zones.append(_Zone(zf.origin, zone_specs(zf.origin, g), g))
            self.servers[ns] = zones

    @classmethod
    def from_system(cls, system: System) -> "ConcreteSystem":
        return cls(system.zonefiles(), system.codec.max_labels)

    def serves(self, ns: str, qname: Name) -> bool:
        return any(names.is_under(qname, z.origin) for z in self.servers[ns])


def run_concrete(
    csys: ConcreteSystem, query: ConcreteQuery, k: int = 16, entry: str | None = None
) -> list[ConcreteRun]:
    """Every branch a concrete query takes; delegation fan-out makes several.

    With ``entry`` the first hop goes straight to that nameserver.
    """
    runs: list[tuple[ConcreteStep, ...]] = []

    def resolve_all(qname, qtype, fuel, steps, visits):
        for ns in csys.servers:
            if csys.serves(ns, qname):
                resolve_at(ns, qname, qtype, fuel, steps, visits)
                return
        runs.append(steps + (ConcreteStep(None, None, None, ActionType.SERVICE_FAIL, qname, qtype),))

    def resolve_at(ns, qname, qtype, fuel, steps, visits):
        if ns not in csys.servers or fuel <= 0:
            runs.append(steps + (ConcreteStep(ns, None, None, ActionType.SERVICE_FAIL, qname, qtype),))
            return
        if (ns, qname, qtype) in visits:
            runs.append(steps + (ConcreteStep(ns, None, None, ActionType.LOOP, qname, qtype),))
            return
        zone = next((z for z in csys.servers[ns] if names.is_under(qname, z.origin)), None)
        if zone is None:
            runs.append(steps + (ConcreteStep(ns, None, ("REFUSE",), ActionType.REFUSE, qname, qtype),))
            return
        zlabel = names.to_text(zone.origin)
        spec = next((s for s in zone.specs if spec_matches(s, qname, qtype)), None)
        if spec is None:
            runs.append(steps + (ConcreteStep(ns, zlabel, ("NX",), ActionType.NONEXIST, qname, qtype),))
            return
        action = make_action(spec, zone.groups)
        seen = visits | {(ns, qname, qtype)}
        atype = action.atype
        if atype is ActionType.DELEGATE:
            step = ConcreteStep(ns, zlabel, spec.key, atype, qname, qtype, qname, action)
            for target in action.targets:
                resolve_at(target, qname, qtype, fuel - 1, steps + (step,), seen)
        elif atype is ActionType.REWRITE_C:
            new = action.rewrite_target
            step = ConcreteStep(ns, zlabel, spec.key, atype, qname, qtype, new, action)
            resolve_all(new, qtype, fuel - 1, steps + (step,), seen)
        elif atype is ActionType.REWRITE_D:
            new = names.replace_suffix(qname, spec.rname, action.rewrite_target)
            if len(new) > csys.max_labels:
                step = ConcreteStep(ns, zlabel, spec.key, ActionType.MAX_LENGTH, qname, qtype, None, action)
                runs.append(steps + (step,))
                return
            step = ConcreteStep(ns, zlabel, spec.key, atype, qname, qtype, new, action)
            resolve_all(new, qtype, fuel - 1, steps + (step,), seen)
        else:
            runs.append(steps + (ConcreteStep(ns, zlabel, spec.key, atype, qname, qtype, None, action),))

    if entry is None:
        resolve_all(query.qname, query.qtype, k, (), frozenset())
    else:
        resolve_at(entry, query.qname, query.qtype, k, (), frozenset())
    return [ConcreteRun(query, steps) for steps in runs]


def universe_size(codec: LabelCodec, depth_limit: int) -> int:
    total, width = 0, 1
    for level in range(1, min(depth_limit + 1, codec.max_labels) + 1):
        width *= len(codec.label_map(level)) + 1
        total += width
    return total * (len(codec.type_map) + 1)


def enumerate_universe(codec: LabelCodec, depth_limit: int, cap: int = 10**6) -> list[ConcreteQuery]:
    """Names of 1..depth_limit+1 labels over the codec vocabulary plus a fresh label per level, times every type."""
    size = universe_size(codec, depth_limit)
    if size > cap:
        raise UniverseTooLarge(f"universe has {size} queries (cap {cap}); use a smaller fixture or depth")
    per_level = [
        sorted(codec.label_map(level)) + [codec.other_witness(level)]
        for level in range(1, min(depth_limit + 1, codec.max_labels) + 1)
    ]
    types = list(codec.type_map) + [OTHER_TYPE_WITNESS]
    out = []
    for depth in range(1, len(per_level) + 1):
        for labels in product(*per_level[:depth]):
            qname = tuple(reversed(labels))
            out.extend(ConcreteQuery(qname, t) for t in types)
    return out


@dataclass
class Mismatch:
    run: ConcreteRun
    matches: int

    def __str__(self) -> str:
        path = " -> ".join(f"{s.nameserver}:{s.atype.value}" for s in self.run.steps)
        return f"{self.run.query}: {path} matched {self.matches} symbolic traces"


def _trace_admits(space, trace: Trace, run: ConcreteRun) -> bool:
    for log, step in zip(trace.logs, run.steps):
        if not space.contains(log.q_in, step.qname, step.qtype):
            return False
        if step.out_name is not None and not space.contains(log.q_out, step.out_name, step.qtype):
            return False
    return True


def compare(system: System, tree: ExecTree, queries: Iterable[ConcreteQuery], k: int | None = None) -> list[Mismatch]:
    """Check that each concrete run is matched by exactly one symbolic trace."""
    k = tree.fuel if k is None else k
    csys = ConcreteSystem.from_system(system)
    index: dict[tuple, list[Trace]] = {}
    for trace in tree.traces():
        index.setdefault(trace.signature(), []).append(trace)
    space = system.space
    bad = []
    for q in queries:
        if tree.entries is None:
            runs = run_concrete(csys, q, k)
        else:
            runs = [r for e in tree.entries for r in run_concrete(csys, q, k, e)]
        for run in runs:
            hits = sum(1 for t in index.get(run.signature(), ()) if _trace_admits(space, t, run))
            if hits != 1:
                bad.append(Mismatch(run, hits))
    return bad
