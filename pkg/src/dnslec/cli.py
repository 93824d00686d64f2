"""dnslec command line: build, verify, update, bench, stats.

Exit codes: 0 when no error-severity findings remain, 1 when some do,
2 for operational failures (bad input, unreadable snapshot, ...).
"""

from __future__ import annotations

import argparse
import gc
import json
import logging
import sys
import time
import warnings
from pathlib import Path
from typing import Sequence

from . import names
from .config import PROPERTY_TAGS, ConfigError, VerifierConfig, resolve_config
from .ingest import ManifestError, ParseError, load_manifest
from .lec import RankUnderflow, DuplicateOrigin, build_system, check_table, minimize_lecs
from .properties import Report, check_all, validate_report
from .snapshot import Snapshot, SnapshotError, ensure_compatible, load, save
from .space import NameTooLong, Predicate, QuerySpace, RebuildRequired
from .symexec import Executor

log = logging.getLogger("dnslec")

EXIT_OK, EXIT_FINDINGS, EXIT_FAILURE = 0, 1, 2


class CommandError(Exception):
    pass


def _emit(text: str = "") -> None:
    print(text, flush=True)


# ---------------------------------------------------------------------------
# helpers


def parse_query(spec: str | None, space: QuerySpace) -> Predicate:
    """``NAME[:TYPE]``; ``*`` alone is every name, ``*.zone`` its proper subdomains."""
    if spec is None or spec in ("*", "*:*"):
        return space.full
    name_text, _, rtype = spec.partition(":")
    types = None if rtype in ("", "*") else [rtype.upper()]
    if name_text == "*":
        return space.all_names(types)
    qname = names.from_text(name_text)
    return space.get_space(qname, types, 0)


def _parse_properties(text: str | None) -> tuple[str, ...] | None:
    if text is None:
        return None
    if text.strip() == "all":
        return PROPERTY_TAGS
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _stats(system, build_seconds: float | None = None) -> dict:
    out = {"nameservers": [], "variables": system.codec.variable_count(), "max_labels": system.codec.max_labels}
    for name, table in system.tables.items():
        out["nameservers"].append(
            {
                "name": name,
                "zones": len(table.zones),
                "rules": table.rule_count(),
                "minimal_lecs": len(minimize_lecs(table, system.space)),
                "build_seconds": round(system.build_seconds.get(name, 0.0), 6),
            }
        )
    if build_seconds is not None:
        out["build_seconds"] = round(build_seconds, 6)
    return out


def _print_stats(stats: dict) -> None:
    _emit(f"variables: {stats['variables']} (max_labels {stats['max_labels']})")
    for ns in stats["nameservers"]:
        _emit(
            f"  {ns['name']}: zones={ns['zones']} rules={ns['rules']} "
            f"minimal_lecs={ns['minimal_lecs']} build={ns['build_seconds']:.4f}s"
        )
    if "build_seconds" in stats:
        _emit(f"total build: {stats['build_seconds']:.4f}s")


def _print_report(report: Report) -> None:
    tally = report.tally()
    total = sum(tally.values())
    _emit(f"traces: {report.trace_count}; findings: {total} ({len(report.errors())} errors)")
    for f in report.findings:
        if f.severity == "info":
            continue
        v = f.representative
        _emit(f"  [{f.severity}] {f.property}: trace {v.trace.id} ({len(f.violations)} trace(s))")
    info = [f for f in report.findings if f.severity == "info"]
    if info:
        _emit(f"  ({len(info)} informational finding(s) not counted)")


def _write_json(doc: dict, path: str | None) -> None:
    if path is None:
        return
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _exit_for(report: Report) -> int:
    return EXIT_FINDINGS if report.errors() else EXIT_OK


def _load_snapshot(args, cli_overrides: dict) -> tuple[Snapshot, VerifierConfig]:
    """Load a snapshot and layer environment and CLI settings over its stored config."""
    snap = load(args.snapshot)
    config = resolve_config(snap.config, cli_overrides)
    ensure_compatible(snap.config, config)
    return snap, config


# ---------------------------------------------------------------------------
# commands


def cmd_build(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = load_manifest(args.manifest, args.policy)
    for w in caught:
        log.warning("%s", w.message)
    for err in result.skipped:
        log.warning("skipped %s", err)
    config = resolve_config(result.manifest.config, {"rl": args.rl, "d_share": args.d_share, "parse_policy": args.policy})
    start = time.perf_counter()
    system = build_system(result.groups, config.rl, config.d_share)
    elapsed = time.perf_counter() - start
    for table in system.tables.values():
        problems = check_table(table, system.space)
        if problems:
            raise CommandError("table invariant violated: " + "; ".join(problems))
    stats = _stats(system, elapsed)
    out = args.output or str(Path(args.manifest).with_suffix(".snap"))
    save(Snapshot(system, config, None, {"manifest": str(Path(args.manifest).resolve()), "stats": stats}), out)
    _emit(f"snapshot written to {out}")
    _print_stats(stats)
    if args.stats_json:
        _write_json(stats, args.stats_json)
    return EXIT_OK


def _run_verify(snap: Snapshot, config: VerifierConfig, query_spec: str | None):
    system = snap.system
    query = parse_query(query_spec, system.space)
    executor = Executor(system, config.fuel, config.prefix_filter, config.loop_mode)
    tree = executor.run(query)
    return tree, check_all(tree.traces(), system, config)


def cmd_verify(args) -> int:
    overrides = {
        "fuel": args.fuel,
        "properties": _parse_properties(args.properties),
        "loop_mode": args.loop_mode,
        "prefix_filter": False if args.no_prefix_filter else None,
    }
    snap, config = _load_snapshot(args, overrides)
    start = time.perf_counter()
    tree, report = _run_verify(snap, config, args.query)
    elapsed = time.perf_counter() - start
    doc = report.to_json(snap.system.space)
    validate_report(doc)
    doc["summary"]["seconds"] = round(elapsed, 6)
    _write_json(doc, args.output)
    _print_report(report)
    _emit(f"verify time: {elapsed:.4f}s")
    if not args.no_store:
        snap.tree = tree
        snap.config = config
        snap.meta["query"] = args.query
        save(snap, args.snapshot)
    return _exit_for(report)


def cmd_update(args) -> int:
    from .incremental import (
        apply_changeset,
        apply_to_groups,
        incremental_verify,
        read_changeset,
        report_delta,
    )

    snap, config = _load_snapshot(args, {})
    system = snap.system
    changes = read_changeset(args.changes)
    query = snap.meta.get("query")
    if snap.tree is None:
        log.info("snapshot has no stored execution; running a full verify first")
        snap.tree, _ = _run_verify(snap, config, query)
    baseline = check_all(snap.tree.traces(), system, config, use_cache=True)

    before_groups = system.zonefiles() if not args.no_rebuild_timing else None
    start = time.perf_counter()
    rebuilt = False
    try:
        change = apply_changeset(system, changes, config.incremental_optimizations)
        result = incremental_verify(system, snap.tree, change, config)
        report = result.report
    except RebuildRequired as exc:
        # the new labels do not fit the frozen coding: start over from the edited zonefiles
        log.warning("incremental update not possible (%s); rebuilding", exc)
        groups = apply_to_groups(before_groups or system.zonefiles(), changes)
        snap.system = system = build_system(groups, config.rl, config.d_share)
        snap.tree, report = _run_verify(snap, config, query)
        rebuilt = True
    inc_seconds = time.perf_counter() - start

    delta = report_delta(baseline, report)
    _emit(f"changes applied: {len(changes)}{' (full rebuild)' if rebuilt else ''}")
    for key in ("removed", "added"):
        for f in delta[key]:
            _emit(f"  {key}: [{f.severity}] {f.property}")
    if not rebuilt:
        _emit(f"re-expanded nodes: {result.reexpanded}; replaced traces: {result.replaced_traces}")
    timing = {"incremental_seconds": round(inc_seconds, 6), "rebuilt": rebuilt}
    if before_groups is not None and changes:
        t0 = time.perf_counter()
        fresh = Snapshot(build_system(apply_to_groups(before_groups, changes), config.rl, config.d_share), config)
        _run_verify(fresh, config, query)
        timing["full_rebuild_seconds"] = round(time.perf_counter() - t0, 6)
        _emit(f"timing: incremental {inc_seconds:.4f}s vs full rebuild+verify {timing['full_rebuild_seconds']:.4f}s")
    else:
        _emit(f"timing: incremental {inc_seconds:.4f}s")

    space = system.space
    if args.report:
        doc = report.to_json(space)
        doc["delta"] = {
            "removed": [{"property": f.property, "severity": f.severity, "key": json.dumps(f.key, default=list)} for f in delta["removed"]],
            "added": [{"property": f.property, "severity": f.severity, "key": json.dumps(f.key, default=list)} for f in delta["added"]],
        }
        doc["timing"] = timing
        _write_json(doc, args.report)
    save(snap, args.output or args.snapshot)
    return _exit_for(report)


def cmd_bench(args) -> int:
    from .bench import load_spec, run_bench, write_csv

    specs, settings = load_spec(args.corpus)
    if args.changes is not None:
        settings.changes = args.changes
    if args.repeats is not None:
        settings.repeats = args.repeats
    if args.jitter is not None:
        settings.jitter = args.jitter
    config = resolve_config(VerifierConfig(), {})
    rows = run_bench(specs, settings, config)
    write_csv(rows, args.output)
    for row in rows:
        flag = " FLAGGED" if row["flagged"] else ""
        _emit(
            f"group {row['group']}: zones={row['zones']} records={row['records']} "
            f"e2e={row['end_to_end_s']:.3f}s incremental={row['incremental_median_s']:.4f}s "
            f"speedup={row['speedup']}{flag}"
        )
    _emit(f"wrote {args.output}")
    return EXIT_OK


def cmd_stats(args) -> int:
    snap = load(args.snapshot)
    stats = _stats(snap.system)
    _print_stats(stats)
    _emit(f"system version: {snap.system.version}; stored execution: {'yes' if snap.tree else 'no'}")
    if args.json:
        _emit(json.dumps(stats, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _d_share(text: str):
    return text if text == "auto" else int(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnslec", description="Symbolic DNS configuration verifier")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="parse a manifest and build the nameserver tables")
    b.add_argument("--manifest", required=True)
    b.add_argument("--rl", type=int)
    b.add_argument("--d-share", type=_d_share)
    b.add_argument("--policy", choices=("abort", "skip"))
    b.add_argument("--stats-json")
    b.add_argument("-o", "--output")
    b.set_defaults(func=cmd_build)

    v = sub.add_parser("verify", help="execute queries symbolically and check properties")
    v.add_argument("--snapshot", required=True)
    v.add_argument("--query", help="NAME[:TYPE]; default is every query")
    v.add_argument("--fuel", type=int)
    v.add_argument("--properties", help="comma-separated property tags, or 'all'")
    v.add_argument("--no-prefix-filter", action="store_true")
    v.add_argument("--loop-mode", choices=("coarse", "exact"))
    v.add_argument("--no-store", action="store_true", help="do not save the execution back into the snapshot")
    v.add_argument("-o", "--output", help="report JSON path")
    v.set_defaults(func=cmd_verify)

    u = sub.add_parser("update", help="apply a changeset incrementally and re-verify")
    u.add_argument("--snapshot", required=True)
    u.add_argument("--changes", required=True)
    u.add_argument("--report", help="write the updated report (with delta and timings) here")
    u.add_argument("--no-rebuild-timing", action="store_true", help="skip the full rebuild used for the timing comparison")
    u.add_argument("-o", "--output", help="updated snapshot path (default: overwrite)")
    u.set_defaults(func=cmd_update)

    bn = sub.add_parser("bench", help="time construction, execution and incremental updates on synthetic corpora")
    bn.add_argument("--corpus", required=True)
    bn.add_argument("--changes", type=int)
    bn.add_argument("--repeats", type=int)
    bn.add_argument("--jitter", type=float)
    bn.add_argument("-o", "--output", required=True)
    bn.set_defaults(func=cmd_bench)

    s = sub.add_parser("stats", help="print table statistics of a snapshot")
    s.add_argument("--snapshot", required=True)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (
        CommandError,
        ConfigError,
        ManifestError,
        ParseError,
        SnapshotError,
        RankUnderflow,
        DuplicateOrigin,
        NameTooLong,
        OSError,
        ValueError,
    ) as exc:
        log.error("%s", exc)
        return EXIT_FAILURE
    finally:
        # predicates caught in reference cycles must go before the diagram manager does
        gc.collect()


if __name__ == "__main__":
    sys.exit(main())
