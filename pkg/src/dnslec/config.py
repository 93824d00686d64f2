"""Verifier configuration with manifest, environment and CLI layering."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

ENV_PREFIX = "DNSLEC_"

PROPERTY_TAGS = (
    "delegation_inconsistency",
    "lame_delegation",
    "missing_glue",
    "nonexistent_domain",
    "cyclic_zone_dependency",
    "rewriting_loop",
    "query_exceeds_max_length",
    "rewrite_blackholing",
    "rewrite_count",
    "hop_count",
)

# rewrite_count is opt-in; see README for why the default set leaves it out.
DEFAULT_PROPERTIES = tuple(tag for tag in PROPERTY_TAGS if tag != "rewrite_count")

DEFAULT_SEVERITY = {
    "delegation_inconsistency": "error",
    "lame_delegation": "info",
    "missing_glue": "error",
    "nonexistent_domain": "info",
    "cyclic_zone_dependency": "error",
    "rewriting_loop": "error",
    "query_exceeds_max_length": "error",
    "rewrite_blackholing": "error",
    "rewrite_count": "warning",
    "hop_count": "warning",
}

SEVERITIES = ("error", "warning", "info")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VerifierConfig:
    rl: int = 4
    d_share: int | str = "auto"
    fuel: int = 16
    properties: tuple[str, ...] = DEFAULT_PROPERTIES
    severity: Mapping[str, str] = field(default_factory=dict)
    expected_names: tuple[str, ...] = ()
    parallelism: int = 1
    blackhole_mode: str = "nxdomain"
    loop_mode: str = "coarse"
    prefix_filter: bool = True
    incremental_optimizations: bool = True
    enum_cap: int = 10**6
    parse_policy: str = "abort"
    hop_threshold: int = 2
    rewrite_threshold: int = 2

    def __post_init__(self) -> None:
        if self.rl < 0:
            raise ConfigError("rl must be >= 0")
        if self.fuel < 1:
            raise ConfigError("fuel must be >= 1")
        if self.d_share != "auto" and (not isinstance(self.d_share, int) or self.d_share < 1):
            raise ConfigError("d_share must be 'auto' or a positive integer")
        unknown = [p for p in self.properties if p not in PROPERTY_TAGS]
        if unknown:
            raise ConfigError(f"unknown property tag(s): {', '.join(unknown)}")
        for tag, sev in self.severity.items():
            if tag not in PROPERTY_TAGS:
                raise ConfigError(f"unknown property tag in severity overrides: {tag}")
            if sev not in SEVERITIES:
                raise ConfigError(f"unknown severity {sev!r} for {tag}")
        if self.blackhole_mode not in ("nxdomain", "strict"):
            raise ConfigError("blackhole_mode must be 'nxdomain' or 'strict'")
        if self.loop_mode not in ("coarse", "exact"):
            raise ConfigError("loop_mode must be 'coarse' or 'exact'")
        if self.parse_policy not in ("abort", "skip"):
            raise ConfigError("parse_policy must be 'abort' or 'skip'")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.enum_cap < 1:
            raise ConfigError("enum_cap must be >= 1")

    def severity_of(self, tag: str) -> str:
        return self.severity.get(tag, DEFAULT_SEVERITY[tag])

    def replace(self, **changes: Any) -> "VerifierConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def encoding_hash(self) -> str:
        """Hash of the settings that shape the label codec and tables."""
        blob = json.dumps({"rl": self.rl, "d_share": self.d_share}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["properties"] = list(self.properties)
        out["severity"] = dict(self.severity)
        out["expected_names"] = list(self.expected_names)
        return out

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "VerifierConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kwargs: dict[str, Any] = dict(data)
        for key in ("properties", "expected_names"):
            if key in kwargs:
                value = kwargs[key]
                if isinstance(value, str):
                    value = [v for v in value.split(",") if v]
                kwargs[key] = tuple(value)
        if "severity" in kwargs:
            kwargs["severity"] = dict(kwargs["severity"])
        return cls(**kwargs)


def _coerce(name: str, raw: str) -> Any:
    ftype = {f.name: f.type for f in dataclasses.fields(VerifierConfig)}[name]
    if name == "d_share":
        return raw if raw == "auto" else int(raw)
    if name in ("properties", "expected_names"):
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if name == "severity":
        pairs = (item.split("=", 1) for item in raw.split(",") if item.strip())
        return {k.strip(): v.strip() for k, v in pairs}
    if ftype in ("bool", bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if ftype in ("int", int):
        return int(raw)
    return raw


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    out: dict[str, Any] = {}
    for f in dataclasses.fields(VerifierConfig):
        key = ENV_PREFIX + f.name.upper()
        if key in environ:
            try:
                out[f.name] = _coerce(f.name, environ[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
    return out


def resolve_config(
    base: VerifierConfig | Mapping[str, Any] | None = None,
    cli: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> VerifierConfig:
    """Layer configuration: manifest/base, then environment, then CLI flags."""
    if base is None:
        cfg = VerifierConfig()
    elif isinstance(base, VerifierConfig):
        cfg = base
    else:
        cfg = VerifierConfig.from_mapping(base)
    cfg = cfg.replace(**env_overrides(environ))
    if cli:
        cfg = cfg.replace(**cli)
    return cfg
