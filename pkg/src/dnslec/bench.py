"""Timing harness over synthetic corpora.

A corpus spec is a TOML file::

    [corpus]            # defaults shared by every group
    zones = 1000
    records_per_zone = 5
    rewrite_density = 0.1
    nameservers = 20
    seed = 0

    [bench]
    changes = 11        # single-record edits timed incrementally
    repeats = 2         # full runs used for the jitter check
    jitter = 0.5        # relative spread above which a row is flagged

    [[group]]           # one CSV row each; keys override [corpus]
    zones = 10

Without ``[[group]]`` tables a single group uses the ``[corpus]`` values.
"""

from __future__ import annotations

import csv
import logging
import statistics
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterable

import tomli

from .config import VerifierConfig
from .incremental import apply_changeset, apply_to_groups, incremental_verify
from .lec import build_system, minimize_lecs
from .properties import check_all
from .space import RebuildRequired
from .symexec import Executor
from .synth import Generator, SynthSpec

log = logging.getLogger(__name__)

COLUMNS = (
    "group",
    "zones",
    "records",
    "nameservers",
    "rules",
    "minimal_lecs",
    "variables",
    "traces",
    "construction_s",
    "execution_s",
    "end_to_end_s",
    "incremental_median_s",
    "incremental_changes",
    "speedup",
    "jitter",
    "flagged",
)


@dataclass
class BenchSettings:
    changes: int = 11
    repeats: int = 2
    jitter: float = 0.5


class BenchSpecError(ValueError):
    pass


def load_spec(path: str | Path) -> tuple[list[SynthSpec], BenchSettings]:
    doc = tomli.loads(Path(path).read_text(encoding="utf-8"))
    synth_keys = {f.name for f in fields(SynthSpec)}
    bench_keys = {f.name for f in fields(BenchSettings)}
    base = dict(doc.get("corpus", {}))
    for table, allowed in (("corpus", synth_keys), ("bench", bench_keys)):
        unknown = set(doc.get(table, {})) - allowed
        if unknown:
            raise BenchSpecError(f"unknown key(s) in [{table}]: {', '.join(sorted(unknown))}")
    groups = doc.get("group") or [{}]
    specs = []
    for i, g in enumerate(groups):
        unknown = set(g) - synth_keys
        if unknown:
            raise BenchSpecError(f"unknown key(s) in group {i}: {', '.join(sorted(unknown))}")
        merged = {**base, **g}
        merged.setdefault("seed", i)
        specs.append(SynthSpec(**merged))
    return specs, BenchSettings(**doc.get("bench", {}))


def _full_run(groups, config: VerifierConfig):
    t0 = time.perf_counter()
    system = build_system(groups, config.rl, config.d_share)
    t1 = time.perf_counter()
    tree = Executor(system, config.fuel, config.prefix_filter, config.loop_mode).run()
    report = check_all(tree.traces(), system, config)
    t2 = time.perf_counter()
    return system, tree, report, t1 - t0, t2 - t1


def bench_group(index: int, spec: SynthSpec, settings: BenchSettings, config: VerifierConfig) -> dict[str, Any]:
    gen = Generator(spec)
    corpus = gen.corpus()
    groups = corpus.groups

    end_to_end = []
    for _ in range(max(1, settings.repeats)):
        system, tree, report, build_s, exec_s = _full_run(groups, config)
        end_to_end.append(build_s + exec_s)

    rules = sum(t.rule_count() for t in system.tables.values())
    minimal = sum(len(minimize_lecs(t, system.space)) for t in system.tables.values())
    traces = len(tree.traces())

    inc_times = []
    attempts = 0
    while len(inc_times) < settings.changes and attempts < 5 * settings.changes + 10:
        attempts += 1
        op = gen.record_change(groups)
        if op is None:
            continue
        t0 = time.perf_counter()
        try:
            change = apply_changeset(system, [op], config.incremental_optimizations)
        except RebuildRequired:
            continue
        incremental_verify(system, tree, change, config)
        inc_times.append(time.perf_counter() - t0)
        groups = apply_to_groups(groups, [op])

    e2e = statistics.median(end_to_end)
    inc = statistics.median(inc_times) if inc_times else float("nan")
    spread = (max(end_to_end) - min(end_to_end)) / e2e if len(end_to_end) > 1 and e2e > 0 else 0.0
    return {
        "group": index,
        "zones": corpus.zone_count(),
        "records": corpus.record_count(),
        "nameservers": len(corpus.groups),
        "rules": rules,
        "minimal_lecs": minimal,
        "variables": system.codec.variable_count(),
        "traces": traces,
        "construction_s": round(build_s, 6),
        "execution_s": round(exec_s, 6),
        "end_to_end_s": round(e2e, 6),
        "incremental_median_s": round(inc, 6),
        "incremental_changes": len(inc_times),
        "speedup": round(e2e / inc, 2) if inc_times and inc > 0 else "",
        "jitter": round(spread, 4),
        "flagged": int(spread > settings.jitter),
    }


def run_bench(specs: Iterable[SynthSpec], settings: BenchSettings, config: VerifierConfig | None = None) -> list[dict]:
    config = config or VerifierConfig()
    rows = []
    for i, spec in enumerate(specs):
        log.info("bench group %d: %s", i, asdict(spec))
        rows.append(bench_group(i, spec, settings, config))
    return rows


def write_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
