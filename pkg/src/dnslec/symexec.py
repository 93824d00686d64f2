"""Symbolic resolution of query sets across nameserver tables.

Execution builds a tree: ``all`` nodes hand a query set to the first
nameserver willing to serve each part, ``at`` nodes match a query set
against one nameserver's table.  Leaves are finished traces.  Keeping the
tree (rather than only the traces) is what lets the incremental verifier
re-run just the subtrees a configuration change can reach.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from . import names
from .lec import REWRITES, Action, ActionType, Rule, System, ZoneTable
from .names import Name
from .space import Predicate, QuerySpace

SERVICE_FAIL = Action(ActionType.SERVICE_FAIL)
LOOP = Action(ActionType.LOOP)


@dataclass(frozen=True, eq=False)
class Log:
    q_in: Predicate
    q_out: Predicate
    nameserver: str | None
    zone: str | None
    rule: tuple | None
    action: Action
    evidence: Predicate | None = None

    @property
    def location(self) -> tuple:
        return (self.nameserver, self.zone, self.rule)

    @property
    def atype(self) -> ActionType:
        return self.action.atype

    def with_spaces(self, q_in: Predicate, q_out: Predicate) -> "Log":
        return dataclasses.replace(self, q_in=q_in, q_out=q_out)


@dataclass(eq=False)
class Trace:
    logs: tuple[Log, ...]
    version: int = 0
    id: int = -1

    @property
    def terminal(self) -> Log:
        return self.logs[-1]

    def signature(self) -> tuple:
        return tuple((log.location, log.atype) for log in self.logs)


@dataclass(eq=False)
class ExecNode:
    kind: str  # "all", "at" or "entry"
    nameserver: str | None
    q: Predicate
    hist: tuple[Log, ...]
    fuel: int
    prefix: Name | None
    children: list = field(default_factory=list)


def match_filter(prefix: Name | None, rule: Rule) -> bool:
    """False only when the prefix and the rule's owner name cannot overlap."""
    if prefix is None or rule.source is None:
        return True
    return names.related(prefix, rule.source)


def update_prefix(prefix: Name | None, action: Action) -> Name | None:
    if action.atype is ActionType.DELEGATE:
        return names.base(action.rname)
    if action.atype in REWRITES:
        return action.rewrite_target
    return prefix


@dataclass(eq=False)
class ExecTree:
    root: ExecNode
    query: Predicate
    entries: tuple[str, ...] | None
    fuel: int
    prefix_filter: bool
    loop_mode: str
    version: int = 0

    def nodes(self) -> Iterator[ExecNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(c for c in reversed(node.children) if isinstance(c, ExecNode))

    def traces(self) -> list[Trace]:
        out: list[Trace] = []
        stack: list = [self.root]
        while stack:
            item = stack.pop()
            if isinstance(item, Trace):
                item.id = len(out)
                out.append(item)
            else:
                stack.extend(reversed(item.children))
        return out


class Executor:
    def __init__(
        self,
        system: System,
        fuel: int = 16,
        prefix_filter: bool = True,
        loop_mode: str = "coarse",
        entries: Iterable[str] | None = None,
    ):
        if loop_mode not in ("coarse", "exact"):
            raise ValueError("loop_mode must be 'coarse' or 'exact'")
        self.system = system
        self.space: QuerySpace = system.space
        self.fuel = fuel
        self.prefix_filter = prefix_filter
        self.loop_mode = loop_mode
        self.entries = tuple(entries) if entries is not None else None

    # public entry points ---------------------------------------------------
    def run(self, query: Predicate | None = None, entries: Iterable[str] | None = None) -> ExecTree:
        q = self.space.full if query is None else query & self.space.full
        if entries is not None:
            self.entries = tuple(entries)
        entries = self.entries
        kind = "all" if entries is None else "entry"
        root = ExecNode(kind, None, q, (), self.fuel, None)
        tree = ExecTree(root, q, entries, self.fuel, self.prefix_filter, self.loop_mode, self.system.version)
        self.expand(root)
        return tree

    def expand(self, node: ExecNode) -> None:
        """(Re)compute a node's subtree from its stored inputs."""
        node.children = []
        if node.q == self.space.false:
            return
        if node.kind == "all":
            self._resolve_all(node)
        elif node.kind == "at":
            self._resolve_at(node)
        else:
            for name in self.entries or ():
                child = ExecNode("at", name, node.q, node.hist, node.fuel, node.prefix)
                self.expand(child)
                node.children.append(child)

    def _trace(self, node: ExecNode, logs: tuple[Log, ...]) -> None:
        node.children.append(Trace(logs, self.system.version))

    # the two mutually recursive resolvers -----------------------------------
    def _resolve_all(self, node: ExecNode) -> None:
        space = self.space
        q = node.q
        for name, table in self.system.tables.items():
            if self.prefix_filter and node.prefix is not None:
                if not any(names.related(o, node.prefix) for o in table.origins()):
                    continue
            part = q & ~table.refuse_rule.bdd
            if part == space.false:
                continue
            child = ExecNode("at", name, part, node.hist, node.fuel, node.prefix)
            self.expand(child)
            node.children.append(child)
            q = q & ~part
            if q == space.false:
                return
        if q != space.false:
            self._trace(node, node.hist + (Log(q, q, None, None, None, SERVICE_FAIL),))

    def _resolve_at(self, node: ExecNode) -> None:
        space = self.space
        ns = node.nameserver
        table = self.system.tables.get(ns)
        q, hist = node.q, node.hist
        if table is None or node.fuel <= 0:
            self._trace(node, hist + (Log(q, q, ns, None, None, SERVICE_FAIL),))
            return

        if self.loop_mode == "coarse":
            visited = space.false
            for log in hist:
                if log.nameserver == ns:
                    visited |= log.q_in
            overlap = q & visited
            if overlap != space.false:
                self._trace(node, hist + (Log(q, q, ns, None, None, LOOP, overlap),))
                return
        else:
            hist, q = self._split_exact_loops(node, ns, q, hist)
            if q == space.false:
                return

        prefix = node.prefix if self.prefix_filter else None
        for zone in table.zones:
            if prefix is not None and not names.related(zone.origin, prefix):
                continue
            qz = q & zone.bdd
            if qz == space.false:
                continue
            q = q & ~zone.bdd
            for rule in zone.all_rules():
                if not match_filter(prefix, rule):
                    continue
                part = qz & rule.bdd
                if part == space.false:
                    continue
                self._apply(node, ns, zone, rule, part, hist)
                qz = qz & ~part
                if qz == space.false:
                    break
        refused = q & table.refuse_rule.bdd
        if refused != space.false:
            self._trace(node, hist + (Log(refused, refused, ns, None, ("REFUSE",), table.refuse_rule.action),))

    def _apply(self, node: ExecNode, ns: str, zone: ZoneTable, rule: Rule, part: Predicate, hist) -> None:
        action = rule.action
        atype = action.atype
        zlabel = zone.label
        if atype is ActionType.DELEGATE:
            log = Log(part, part, ns, zlabel, rule.key, action)
            h = hist + (log,)
            prefix = update_prefix(node.prefix, action)
            for target in action.targets:
                child = ExecNode("at", target, part, h, node.fuel - 1, prefix)
                self.expand(child)
                node.children.append(child)
        elif atype is ActionType.REWRITE_C:
            out = self.space.rewrite_cname(part, action.rewrite_target)
            log = Log(part, out, ns, zlabel, rule.key, action)
            child = ExecNode("all", None, out, hist + (log,), node.fuel - 1, update_prefix(node.prefix, action))
            self.expand(child)
            node.children.append(child)
        elif atype is ActionType.REWRITE_D:
            out, overflow = self.space.rewrite_dname(part, action.rname, action.rewrite_target)
            if overflow != self.space.false:
                too_long = Action(ActionType.MAX_LENGTH, (), action.rname)
                self._trace(node, hist + (Log(overflow, overflow, ns, zlabel, rule.key, too_long),))
            kept = part & ~overflow
            if kept != self.space.false:
                log = Log(kept, out, ns, zlabel, rule.key, action)
                child = ExecNode("all", None, out, hist + (log,), node.fuel - 1, update_prefix(node.prefix, action))
                self.expand(child)
                node.children.append(child)
        else:
            self._trace(node, hist + (Log(part, part, ns, zlabel, rule.key, action),))

    # exact loop splitting -----------------------------------------------------
    def image(self, log: Log, p: Predicate) -> Predicate:
        atype = log.atype
        if atype is ActionType.REWRITE_C:
            return self.space.rewrite_cname(p, log.action.rewrite_target)
        if atype is ActionType.REWRITE_D:
            return self.space.rewrite_dname(p, log.action.rname, log.action.rewrite_target)[0]
        return p

    def preimage(self, log: Log, p: Predicate) -> Predicate:
        atype = log.atype
        if atype is ActionType.REWRITE_C:
            return log.q_in & self.space.types_of(p)
        if atype is ActionType.REWRITE_D:
            return log.q_in & self.space.dname_preimage(p, log.action.rname, log.action.rewrite_target)
        return log.q_in & p

    @staticmethod
    def _can_revisit(hist: tuple[Log, ...], start: int) -> bool:
        """Whether the name transformation from ``start`` onward can map a name to itself."""
        composed: tuple[Name, Name] | None = None
        for log in hist[start:]:
            if log.atype is ActionType.REWRITE_C:
                return True
            if log.atype is not ActionType.REWRITE_D:
                continue
            src, dst = log.action.rname, log.action.rewrite_target
            if composed is None:
                composed = (src, dst)
                continue
            s1, d1 = composed
            if names.is_under(d1, src):
                composed = (s1, d1[: len(d1) - len(src)] + dst)
            elif names.is_under(src, d1):
                composed = (src[: len(src) - len(d1)] + s1, dst)
            else:
                return False
        return composed is None or composed[0] == composed[1]

    def _restrict(self, hist: tuple[Log, ...], q: Predicate, start: int, keep: Predicate):
        """Narrow the trace from step ``start`` on to the population ``keep``."""
        logs = list(hist)
        cur = keep
        out = cur
        for k in range(start, len(hist)):
            q_in = hist[k].q_in & cur
            out = self.image(hist[k], q_in)
            logs[k] = hist[k].with_spaces(q_in, out)
            if k + 1 < len(hist):
                cur = hist[k + 1].q_in & out
        return tuple(logs), q & out

    def _split_exact_loops(self, node: ExecNode, ns: str, q: Predicate, hist: tuple[Log, ...]):
        space = self.space
        for i, log in enumerate(hist):
            if log.nameserver != ns or not self._can_revisit(hist, i):
                continue
            pop = q
            for k in range(len(hist) - 1, i - 1, -1):
                pop = self.preimage(hist[k], pop)
            looping = pop & q
            if looping == space.false:
                continue
            loop_hist, loop_q = self._restrict(hist, q, i, looping)
            if loop_q != space.false:
                self._trace(node, loop_hist + (Log(loop_q, loop_q, ns, None, None, LOOP, loop_q),))
            hist, q = self._restrict(hist, q, i, hist[i].q_in & ~looping)
            if q == space.false:
                break
        return hist, q


def run(system: System, query: Predicate | None = None, fuel: int = 16, **kwargs) -> ExecTree:
    return Executor(system, fuel, **kwargs).run(query)
