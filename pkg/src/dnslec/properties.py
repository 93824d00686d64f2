"""Misconfiguration detectors over symbolic traces and report assembly."""

from __future__ import annotations

import base64
import json
import weakref
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable

from . import names
from .config import PROPERTY_TAGS, ConfigError, VerifierConfig
from .lec import REWRITES, ActionType, System
from .space import Predicate, PredicateCodec, QuerySpace
from .symexec import Log, Trace

REPORT_SCHEMA_ID = "dnslec.report/1"


@dataclass(eq=False)
class Violation:
    property: str
    trace: Trace
    logs: tuple[int, ...]
    evidence: Predicate
    key: tuple
    severity: str = "error"

    @property
    def first_log(self) -> Log:
        return self.trace.logs[self.logs[0]]


@dataclass(eq=False)
class Finding:
    """Violations of one property that share a root cause."""

    property: str
    severity: str
    key: tuple
    violations: list[Violation] = field(default_factory=list)

    @property
    def representative(self) -> Violation:
        return self.violations[0]


def _fmt_loc(log: Log) -> str:
    parts = [log.nameserver or "-", log.zone or "-"]
    if log.rule:
        parts.append("/".join(str(p) for p in log.rule))
    return "|".join(parts)


def _rewrite_indices(trace: Trace) -> list[int]:
    return [i for i, log in enumerate(trace.logs[:-1]) if log.atype in REWRITES]


class Detectors:
    """Each detector maps one trace to the violations of one property."""

    def __init__(self, system: System, config: VerifierConfig):
        self.system = system
        self.space: QuerySpace = system.space
        self.config = config

    def delegation_inconsistency(self, trace: Trace) -> Iterable[Violation]:
        logs = trace.logs
        for i, log in enumerate(logs[:-1]):
            if log.atype is not ActionType.DELEGATE:
                continue
            child_log = logs[i + 1]
            delegated = names.base(log.action.rname)
            table = self.system.tables.get(child_log.nameserver)
            if table is None or child_log.zone != names.to_text(delegated):
                continue
            child = table.zone(delegated)
            child_ns = set(child.groups.get((delegated, "NS"), ()))
            parent_ns = set(log.action.targets)
            parent_glue = set(log.action.glue)
            child_glue = set()
            for target in {g[0] for g in parent_glue}:
                tname = names.from_text(target)
                if not names.is_under(tname, child.origin):
                    parent_glue = {g for g in parent_glue if g[0] != target}
                    continue
                for rtype in ("A", "AAAA"):
                    child_glue.update((target, rtype, rd) for rd in child.groups.get((tname, rtype), ()))
            if child_ns != parent_ns or child_glue != parent_glue:
                yield Violation(
                    "delegation_inconsistency",
                    trace,
                    (i, i + 1),
                    child_log.q_in,
                    (_fmt_loc(log), child_log.nameserver),
                )

    def lame_delegation(self, trace: Trace) -> Iterable[Violation]:
        logs = trace.logs
        if len(logs) >= 2 and logs[-1].atype is ActionType.REFUSE and logs[-2].atype is ActionType.DELEGATE:
            last = len(logs) - 1
            yield Violation("lame_delegation", trace, (last, last - 1), logs[-1].q_in, (_fmt_loc(logs[-2]), logs[-1].nameserver))

    def missing_glue(self, trace: Trace) -> Iterable[Violation]:
        for i, log in enumerate(trace.logs):
            if log.atype is not ActionType.DELEGATE:
                continue
            delegated = names.base(log.action.rname)
            glued = {g[0] for g in log.action.glue}
            missing = tuple(
                t for t in log.action.targets if names.is_under(names.from_text(t), delegated) and t not in glued
            )
            if missing:
                yield Violation("missing_glue", trace, (i,), log.q_in, (_fmt_loc(log), missing))

    def nonexistent_domain(self, trace: Trace) -> Iterable[Violation]:
        last = trace.terminal
        if last.atype is ActionType.NONEXIST:
            yield Violation("nonexistent_domain", trace, (len(trace.logs) - 1,), last.q_in, (_fmt_loc(last),))

    def cyclic_zone_dependency(self, trace: Trace) -> Iterable[Violation]:
        logs = trace.logs
        for j in range(len(logs)):
            if logs[j].rule is None:
                continue
            for i in range(j):
                if logs[i].location == logs[j].location and logs[i].q_in == logs[j].q_in:
                    yield Violation("cyclic_zone_dependency", trace, (j, i), logs[j].q_in, (_fmt_loc(logs[j]),))
                    break

    def rewriting_loop(self, trace: Trace) -> Iterable[Violation]:
        last = trace.terminal
        if last.atype is not ActionType.LOOP:
            return
        rewrites = _rewrite_indices(trace)
        if not rewrites:
            return
        first_visit = next(
            (i for i, log in enumerate(trace.logs[:-1]) if log.nameserver == last.nameserver),
            0,
        )
        cycle = frozenset(_fmt_loc(trace.logs[i]) for i in rewrites if i >= first_visit)
        evidence = last.evidence if last.evidence is not None else last.q_in
        end = len(trace.logs) - 1
        yield Violation("rewriting_loop", trace, (end, *rewrites), evidence, (tuple(sorted(cycle)),))

    def query_exceeds_max_length(self, trace: Trace) -> Iterable[Violation]:
        last = trace.terminal
        if last.atype is ActionType.MAX_LENGTH:
            yield Violation("query_exceeds_max_length", trace, (len(trace.logs) - 1,), last.q_in, (_fmt_loc(last),))

    def rewrite_blackholing(self, trace: Trace) -> Iterable[Violation]:
        last = trace.terminal
        bad = {ActionType.NONEXIST}
        if self.config.blackhole_mode == "strict":
            bad.add(ActionType.SERVICE_FAIL)
        if last.atype not in bad:
            return
        rewrites = _rewrite_indices(trace)
        if rewrites:
            end = len(trace.logs) - 1
            key = (_fmt_loc(trace.logs[rewrites[-1]]), last.nameserver, last.zone, last.atype.value)
            yield Violation("rewrite_blackholing", trace, (end, rewrites[-1]), last.q_in, key)

    def rewrite_count(self, trace: Trace) -> Iterable[Violation]:
        rewrites = _rewrite_indices(trace)
        if len(rewrites) >= self.config.rewrite_threshold:
            end = len(trace.logs) - 1
            key = tuple(_fmt_loc(trace.logs[i]) for i in rewrites)
            yield Violation("rewrite_count", trace, (end, *rewrites), trace.terminal.q_in, key)

    def hop_count(self, trace: Trace) -> Iterable[Violation]:
        hops = len(trace.logs) - 1
        if hops >= self.config.hop_threshold:
            key = tuple(log.nameserver or "-" for log in trace.logs)
            yield Violation("hop_count", trace, (hops,), trace.terminal.q_in, key)


def _validate(properties: Iterable[str]) -> tuple[str, ...]:
    props = tuple(properties)
    unknown = [p for p in props if p not in PROPERTY_TAGS]
    if unknown:
        raise ConfigError(f"unknown property tag(s): {', '.join(unknown)}")
    return props


def check_trace(
    trace: Trace,
    system: System,
    config: VerifierConfig | None = None,
    properties: Iterable[str] | None = None,
) -> list[Violation]:
    config = config or VerifierConfig()
    props = _validate(config.properties if properties is None else properties)
    detectors = Detectors(system, config)
    expected = _expected_space(system.space, config)
    out = []
    for tag in props:
        detect: Callable[[Trace], Iterable[Violation]] = getattr(detectors, tag)
        for v in detect(trace):
            v.severity = _severity(v, config, expected, system.space)
            out.append(v)
    return out


def _expected_space(space: QuerySpace, config: VerifierConfig) -> Predicate:
    u = space.false
    for text in config.expected_names:
        u |= space.get_space(names.from_text(text), None, 0)
    return u


def _severity(v: Violation, config: VerifierConfig, expected: Predicate, space: QuerySpace) -> str:
    sev = config.severity_of(v.property)
    if (
        v.property in ("nonexistent_domain", "lame_delegation")
        and sev == "info"
        and expected != space.false
        and v.evidence & expected != space.false
    ):
        return "error"
    return sev


@dataclass(eq=False)
class Report:
    findings: list[Finding]
    trace_count: int
    properties: tuple[str, ...]

    def of(self, tag: str) -> list[Finding]:
        return [f for f in self.findings if f.property == tag]

    def counted(self) -> list[Finding]:
        return [f for f in self.findings if f.severity in ("error", "warning")]

    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    def tally(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for f in self.counted():
            out[f.property] = out.get(f.property, 0) + 1
        return out

    def signature(self) -> list[tuple]:
        """Everything a report asserts, in a form two reports over one manager can compare."""
        return [
            (f.property, f.severity, f.key, tuple((v.trace.id, v.logs, v.evidence) for v in f.violations))
            for f in self.findings
        ]

    def to_json(self, space: QuerySpace, include_blobs: bool = True) -> dict:
        counted, info = [], []
        for f in self.findings:
            (info if f.severity == "info" else counted).append(_finding_json(f, space, include_blobs))
        by_sev = {s: sum(1 for f in self.findings if f.severity == s) for s in ("error", "warning", "info")}
        return {
            "schema": REPORT_SCHEMA_ID,
            "summary": {
                "findings": len(counted),
                "errors": by_sev["error"],
                "warnings": by_sev["warning"],
                "info": by_sev["info"],
                "traces": self.trace_count,
                "by_property": self.tally(),
                "properties": list(self.properties),
            },
            "findings": counted,
            "info": info,
        }


def predicate_blob(space: QuerySpace, p: Predicate) -> str:
    codec = PredicateCodec(space)
    root = codec.ref(p)
    payload = json.dumps({"root": root, **codec.dump()}, separators=(",", ":"))
    return base64.b64encode(zlib.compress(payload.encode())).decode()


def _query_json(space: QuerySpace, p: Predicate) -> dict | None:
    picked = space.pick(p)
    if picked is None:
        return None
    return {"qname": names.to_text(picked[0]), "qtype": picked[1]}


def _finding_json(f: Finding, space: QuerySpace, include_blobs: bool) -> dict:
    v = f.representative
    out = {
        "property": f.property,
        "severity": f.severity,
        "key": json.dumps(f.key, default=list),
        "trace_id": v.trace.id,
        "trace_ids": [x.trace.id for x in f.violations],
        "offending_logs": list(v.logs),
        "witness": _query_json(space, v.evidence),
        "trace": [
            {
                "nameserver": log.nameserver,
                "zone": log.zone,
                "rule": list(log.rule) if log.rule else None,
                "atype": log.atype.value,
                "q_in_sample": _query_json(space, log.q_in),
            }
            for log in v.trace.logs
        ],
    }
    if include_blobs:
        out["evidence"] = predicate_blob(space, v.evidence)
    return out


def group_violations(violations: Iterable[Violation], properties: tuple[str, ...]) -> list[Finding]:
    grouped: dict[tuple, Finding] = {}
    for v in violations:
        k = (v.property, v.severity, v.key)
        if k not in grouped:
            grouped[k] = Finding(v.property, v.severity, v.key)
        grouped[k].violations.append(v)
    order = {tag: i for i, tag in enumerate(properties)}
    return sorted(grouped.values(), key=lambda f: order[f.property])


# Violations already computed per trace.  Kept outside the trace itself so
# that trace -> violation -> trace never forms a reference cycle: cycles of
# diagram handles can outlive their manager during garbage collection.
_checked: "weakref.WeakKeyDictionary[Trace, tuple]" = weakref.WeakKeyDictionary()


def forget(trace: Trace) -> None:
    """Drop cached violations so the next cached check recomputes them."""
    _checked.pop(trace, None)


def check_all(
    traces: list[Trace],
    system: System,
    config: VerifierConfig | None = None,
    properties: Iterable[str] | None = None,
    use_cache: bool = False,
) -> Report:
    """Run every enabled detector over every trace and group the results.

    With ``use_cache`` a trace keeps the violations computed for it earlier,
    which is how incremental verification avoids re-checking untouched traces.
    """
    config = config or VerifierConfig()
    props = _validate(config.properties if properties is None else properties)
    detectors = Detectors(system, config)
    expected = _expected_space(system.space, config)
    all_violations: list[Violation] = []
    for trace in traces:
        cached = _checked.get(trace)
        if use_cache and cached is not None and cached[0] == (props, config):
            found = cached[1]
        else:
            found = []
            for tag in props:
                for v in getattr(detectors, tag)(trace):
                    v.severity = _severity(v, config, expected, system.space)
                    found.append(v)
            _checked[trace] = ((props, config), found)
        all_violations.extend(found)
    return Report(group_violations(all_violations, props), len(traces), props)


REPORT_JSON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "summary", "findings", "info"],
    "properties": {
        "schema": {"const": REPORT_SCHEMA_ID},
        "summary": {
            "type": "object",
            "required": ["findings", "errors", "warnings", "info", "traces", "by_property"],
            "properties": {
                "findings": {"type": "integer", "minimum": 0},
                "errors": {"type": "integer", "minimum": 0},
                "warnings": {"type": "integer", "minimum": 0},
                "info": {"type": "integer", "minimum": 0},
                "traces": {"type": "integer", "minimum": 0},
                "by_property": {"type": "object", "additionalProperties": {"type": "integer"}},
            },
        },
        "findings": {"type": "array", "items": {"$ref": "#/$defs/finding"}},
        "info": {"type": "array", "items": {"$ref": "#/$defs/finding"}},
    },
    "$defs": {
        "query": {
            "type": "object",
            "required": ["qname", "qtype"],
            "properties": {"qname": {"type": "string"}, "qtype": {"type": "string"}},
        },
        "finding": {
            "type": "object",
            "required": ["property", "severity", "key", "trace_id", "witness", "trace"],
            "properties": {
                "property": {"enum": list(PROPERTY_TAGS)},
                "severity": {"enum": ["error", "warning", "info"]},
                "key": {"type": "string"},
                "trace_id": {"type": "integer", "minimum": 0},
                "trace_ids": {"type": "array", "items": {"type": "integer"}},
                "offending_logs": {"type": "array", "items": {"type": "integer"}},
                "witness": {"$ref": "#/$defs/query"},
                "evidence": {"type": "string"},
                "trace": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["nameserver", "zone", "atype", "q_in_sample"],
                        "properties": {
                            "nameserver": {"type": ["string", "null"]},
                            "zone": {"type": ["string", "null"]},
                            "atype": {"type": "string"},
                            "q_in_sample": {"$ref": "#/$defs/query"},
                        },
                    },
                },
            },
        },
    },
}


def validate_report(doc: dict) -> None:
    import jsonschema

    jsonschema.validate(doc, REPORT_JSON_SCHEMA)


def load_blob(space: QuerySpace, blob: str) -> Predicate:
    from .space import load_node_table

    data = json.loads(zlib.decompress(base64.b64decode(blob)))
    return load_node_table(space, data)[data["root"]]
