"""Shared fixtures and comparison helpers for the test suite."""

from __future__ import annotations

from importlib.resources import files
from pathlib import Path

from dnslec.config import VerifierConfig
from dnslec.ingest import load_manifest
from dnslec.lec import System, build_system
from dnslec.properties import Report, check_all
from dnslec.symexec import ExecTree, Executor

WORKFLOW_DIR = Path(str(files("dnslec") / "data" / "workflow"))
WORKFLOW_MANIFEST = WORKFLOW_DIR / "manifest.toml"
FIX_CHANGES = WORKFLOW_DIR / "fix-where.changes"


def workflow_groups():
    return load_manifest(WORKFLOW_MANIFEST).groups


def verify(system: System, config: VerifierConfig | None = None, **executor_opts) -> tuple[ExecTree, Report]:
    config = config or VerifierConfig()
    opts = {"fuel": config.fuel, "prefix_filter": config.prefix_filter, "loop_mode": config.loop_mode}
    opts.update(executor_opts)
    tree = Executor(system, **opts).run()
    return tree, check_all(tree.traces(), system, config)


def workflow(config: VerifierConfig | None = None, **executor_opts) -> tuple[System, ExecTree, Report]:
    system = build_system(workflow_groups())
    tree, report = verify(system, config, **executor_opts)
    return system, tree, report


def trace_signatures(tree: ExecTree) -> list[tuple]:
    """Locations, actions and query sets of every trace, in tree order."""
    return [(t.signature(), tuple((log.q_in, log.q_out) for log in t.logs)) for t in tree.traces()]
