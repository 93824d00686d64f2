"""Master-file parsing and manifest loading."""

from __future__ import annotations

import ipaddress
import logging
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import tomli

from . import names
from .config import VerifierConfig
from .names import InvalidName, Name

log = logging.getLogger(__name__)

SUPPORTED_TYPES = ("SOA", "NS", "A", "AAAA", "CNAME", "DNAME", "MX", "TXT")
NAME_RDATA_TYPES = ("NS", "CNAME", "DNAME")
SINGLETON_TYPES = ("CNAME", "DNAME", "SOA")
REJECTED_TYPES = ("RRSIG", "DNSKEY", "NSEC", "NSEC3", "NSEC3PARAM", "DS")
DEFAULT_TTL = 3600

_TTL_RE = re.compile(r"^(\d+|(\d+[smhdwSMHDW])+)$")
_TYPE_RE = re.compile(r"^[A-Z][A-Z0-9-]*$")
_UNIT = {"s": 1, "m": 60, "h": 3600, "d": 86400, "w": 604800}


class ParseError(ValueError):
    def __init__(self, line: int, reason: str, source: str | None = None):
        self.line = line
        self.reason = reason
        self.source = source
        where = f"{source}:" if source else "line "
        super().__init__(f"{where}{line}: {reason}")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class ResourceRecord:
    rname: Name
    rtype: str
    rdata: str

    @property
    def target(self) -> Name:
        """The domain name carried in the rdata (NS, CNAME, DNAME, MX)."""
        if self.rtype in NAME_RDATA_TYPES:
            return names.from_text(self.rdata)
        if self.rtype == "MX":
            return names.from_text(self.rdata.split()[1])
        raise ValueError(f"{self.rtype} rdata carries no domain name")

    def to_text(self, ttl: int = DEFAULT_TTL) -> str:
        return f"{names.to_text(self.rname)} {ttl} IN {self.rtype} {self.rdata}"

    def __str__(self) -> str:
        return f"<{names.to_text(self.rname)} {self.rtype} {self.rdata}>"


@dataclass(frozen=True)
class Zonefile:
    origin: Name
    records: tuple[ResourceRecord, ...]
    source_path: str = "<memory>"

    def to_text(self) -> str:
        lines = [f"$ORIGIN {names.to_text(self.origin)}", f"$TTL {DEFAULT_TTL}"]
        lines += [r.to_text() for r in self.records]
        return "\n".join(lines) + "\n"


def parse_ttl(token: str) -> int:
    if token.isdigit():
        return int(token)
    total = 0
    for number, unit in re.findall(r"(\d+)([smhdwSMHDW])", token):
        total += int(number) * _UNIT[unit.lower()]
    return total


@dataclass
class _Line:
    number: int
    tokens: list[str] = field(default_factory=list)
    quoted: list[bool] = field(default_factory=list)
    indented: bool = False


def _logical_lines(text: str) -> Iterator[_Line]:
    """Split master-file text into logical lines, honouring quotes, comments and parens."""
    current: _Line | None = None
    depth = 0
    open_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if current is None:
            current = _Line(lineno, indented=raw[:1] in (" ", "\t"))
        i, n = 0, len(raw)
        while i < n:
            ch = raw[i]
            if ch in " \t\r":
                i += 1
            elif ch == ";":
                break
            elif ch == "(":
                if depth == 0:
                    open_line = lineno
                depth += 1
                i += 1
            elif ch == ")":
                if depth == 0:
                    raise ParseError(lineno, "closing parenthesis without opening one")
                depth -= 1
                i += 1
            elif ch == '"':
                j = i + 1
                buf = []
                while j < n and raw[j] != '"':
                    if raw[j] == "\\" and j + 1 < n:
                        buf.append(raw[j : j + 2])
                        j += 2
                        continue
                    buf.append(raw[j])
                    j += 1
                if j >= n:
                    raise ParseError(lineno, "unbalanced quote")
                current.tokens.append("".join(buf))
                current.quoted.append(True)
                i = j + 1
            else:
                j = i
                while j < n and raw[j] not in ' \t\r;()"':
                    j += 1
                current.tokens.append(raw[i:j])
                current.quoted.append(False)
                i = j
        if depth == 0:
            if current.tokens:
                yield current
            current = None
    if depth:
        raise ParseError(open_line, "unbalanced parenthesis")
    if current is not None and current.tokens:
        yield current


def _name(token: str, origin: Name | None, lineno: int) -> Name:
    try:
        return names.from_text(token, origin)
    except InvalidName as exc:
        raise ParseError(lineno, f"bad name {token!r}: {exc}") from None


def _int_field(token: str, lineno: int, what: str, upper: int = 2**32 - 1) -> int:
    if not _TTL_RE.match(token):
        raise ParseError(lineno, f"bad {what} {token!r}")
    value = parse_ttl(token)
    if value > upper:
        raise ParseError(lineno, f"{what} out of range: {token}")
    return value


def _rdata(rtype: str, tokens: list[str], quoted: list[bool], origin: Name | None, lineno: int) -> str:
    def arity(k: int) -> None:
        if len(tokens) != k:
            raise ParseError(lineno, f"{rtype} expects {k} rdata field(s), got {len(tokens)}")

    if rtype == "SOA":
        arity(7)
        mname = _name(tokens[0], origin, lineno)
        rname = _name(tokens[1], origin, lineno)
        nums = [_int_field(t, lineno, "SOA timer") for t in tokens[2:]]
        return " ".join([names.to_text(mname), names.to_text(rname)] + [str(v) for v in nums])
    if rtype in NAME_RDATA_TYPES:
        arity(1)
        return names.to_text(_name(tokens[0], origin, lineno))
    if rtype == "A":
        arity(1)
        try:
            return str(ipaddress.IPv4Address(tokens[0]))
        except ValueError:
            raise ParseError(lineno, f"bad IPv4 address {tokens[0]!r}") from None
    if rtype == "AAAA":
        arity(1)
        try:
            return str(ipaddress.IPv6Address(tokens[0]))
        except ValueError:
            raise ParseError(lineno, f"bad IPv6 address {tokens[0]!r}") from None
    if rtype == "MX":
        arity(2)
        pref = _int_field(tokens[0], lineno, "MX preference", 65535)
        return f"{pref} {names.to_text(_name(tokens[1], origin, lineno))}"
    if rtype == "TXT":
        if not tokens:
            raise ParseError(lineno, "TXT expects at least one string")
        return " ".join('"' + t.replace('"', '\\"') + '"' if not q else f'"{t}"' for t, q in zip(tokens, quoted))
    if not tokens:
        raise ParseError(lineno, f"{rtype} record without rdata")
    return " ".join(f'"{t}"' if q else t for t, q in zip(tokens, quoted))


def _parse_lines(lines: list[_Line], origin: Name | None):
    """Yield ``(lineno, record)`` pairs, tracking $ORIGIN and the previous owner.

    The first $ORIGIN seen before any record is reported as ``(0, origin)``.
    """
    last_owner: Name | None = None
    emitted = False
    for line in lines:
        toks, quoted, lineno = line.tokens, line.quoted, line.number
        head = toks[0]
        if head.startswith("$") and not line.indented:
            directive = head.upper()
            if directive == "$ORIGIN":
                if len(toks) != 2:
                    raise ParseError(lineno, "$ORIGIN expects one name")
                origin = _name(toks[1], origin, lineno)
                if not emitted:
                    yield 0, origin
            elif directive == "$TTL":
                if len(toks) != 2 or not _TTL_RE.match(toks[1]):
                    raise ParseError(lineno, "$TTL expects one duration")
            else:
                raise ParseError(lineno, f"unsupported directive {head}")
            continue

        if line.indented:
            if last_owner is None:
                raise ParseError(lineno, "record without owner name")
            owner = last_owner
            rest = list(zip(toks, quoted))
        else:
            if quoted[0]:
                raise ParseError(lineno, "owner name may not be quoted")
            owner = _name(head, origin, lineno)
            rest = list(zip(toks[1:], quoted[1:]))
        last_owner = owner

        seen_ttl = seen_class = False
        rtype = None
        while rest:
            tok, q = rest.pop(0)
            if q:
                raise ParseError(lineno, f"unexpected quoted string {tok!r}")
            up = tok.upper()
            if not seen_ttl and _TTL_RE.match(tok):
                parse_ttl(tok)
                seen_ttl = True
            elif not seen_class and up in ("IN", "CH", "HS", "CS", "ANY"):
                if up != "IN":
                    raise ParseError(lineno, f"unsupported class {up}")
                seen_class = True
            else:
                rtype = up
                break
        if rtype is None:
            raise ParseError(lineno, "missing record type")
        if not _TYPE_RE.match(rtype):
            raise ParseError(lineno, f"bad record type {rtype!r}")
        if rtype in REJECTED_TYPES:
            raise ParseError(lineno, f"unsupported record type {rtype}")
        rdata = _rdata(rtype, [t for t, _ in rest], [q for _, q in rest], origin, lineno)
        emitted = True
        yield lineno, ResourceRecord(owner, rtype, rdata)


def parse_record(text: str, origin: Name | str | None = None) -> ResourceRecord:
    """Parse a single master-file record line."""
    if isinstance(origin, str):
        origin = _name(origin, None, 0)
    records = [r for n, r in _parse_lines(list(_logical_lines(text)), origin) if n]
    if len(records) != 1:
        raise ParseError(1, f"expected one record, found {len(records)}")
    return records[0]


def parse_zonefile(text: str, origin_hint: Name | str | None = None, source_path: str = "<memory>") -> Zonefile:
    """Parse master-file text into a Zonefile.

    Raises ParseError with the offending line for malformed input.
    """
    if isinstance(origin_hint, str):
        origin_hint = _name(origin_hint, None, 0)
    zone_origin: Name | None = origin_hint
    records: list[tuple[int, ResourceRecord]] = []
    try:
        for lineno, item in _parse_lines(list(_logical_lines(text)), origin_hint):
            if lineno == 0:
                if zone_origin is None:
                    zone_origin = item
            else:
                records.append((lineno, item))

        soas = [(n, r) for n, r in records if r.rtype == "SOA"]
        if not soas:
            raise ParseError(len(text.splitlines()) or 1, "missing SOA record")
        if len(soas) > 1:
            raise ParseError(soas[1][0], "more than one SOA record")
        soa_line, soa = soas[0]
        if zone_origin is None:
            zone_origin = soa.rname
        if soa.rname != zone_origin:
            raise ParseError(soa_line, f"SOA owner {names.to_text(soa.rname)} differs from origin {names.to_text(zone_origin)}")
        singles: dict[tuple[Name, str], int] = {}
        for lineno, rec in records:
            if not names.is_under(rec.rname, zone_origin):
                raise ParseError(lineno, f"{names.to_text(rec.rname)} is outside zone {names.to_text(zone_origin)}")
            if rec.rtype in SINGLETON_TYPES:
                key = (rec.rname, rec.rtype)
                if key in singles:
                    raise ParseError(lineno, f"multiple {rec.rtype} records at {names.to_text(rec.rname)}")
                singles[key] = lineno
            if rec.rtype == "DNAME" and names.is_wildcard(rec.rname):
                raise ParseError(lineno, "DNAME owner may not be a wildcard")
    except ParseError as exc:
        raise ParseError(exc.line, exc.reason, source_path) from None

    return Zonefile(zone_origin, tuple(r for _, r in records), source_path)


def read_zonefile(path: str | Path, origin_hint: Name | str | None = None) -> Zonefile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(0, f"not UTF-8: {exc}", str(path)) from None
    return parse_zonefile(text, origin_hint, str(path))


@dataclass(frozen=True)
class ZoneSource:
    path: Path
    origin: Name | None = None


@dataclass(frozen=True)
class Manifest:
    nameservers: dict[str, list[ZoneSource]]
    config: VerifierConfig
    path: Path | None = None
    allow_shared_zones: bool = False


@dataclass
class LoadResult:
    manifest: Manifest
    groups: dict[str, list[Zonefile]]
    skipped: list[ParseError]


def load_manifest(path: str | Path, policy: str | None = None) -> LoadResult:
    """Load a TOML manifest and parse every zonefile it lists.

    ``policy`` is ``"abort"`` (raise on the first bad zonefile) or
    ``"skip"`` (drop it and keep going); it defaults to the manifest's
    ``parse_policy`` setting.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = tomli.loads(path.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ManifestError(f"{path}: {exc}") from None
    manifest = manifest_from_dict(doc, path.parent, path)
    policy = policy or manifest.config.parse_policy

    groups: dict[str, list[Zonefile]] = {}
    skipped: list[ParseError] = []
    for ns, sources in manifest.nameservers.items():
        zones = []
        for src in sources:
            try:
                zones.append(read_zonefile(src.path, src.origin))
            except ParseError as exc:
                if policy == "abort":
                    raise
                log.warning("skipping invalid zonefile %s", exc)
                skipped.append(exc)
        groups[ns] = zones
    return LoadResult(manifest, groups, skipped)


def manifest_from_dict(doc: dict, base_dir: Path, path: Path | None = None) -> Manifest:
    allowed = {"config", "nameserver", "allow_shared_zones"}
    extra = sorted(set(doc) - allowed)
    if extra:
        raise ManifestError(f"unknown manifest key(s): {', '.join(extra)}")
    config = VerifierConfig.from_mapping(doc.get("config", {}))
    allow_shared = bool(doc.get("allow_shared_zones", False))
    entries = doc.get("nameserver", [])
    if not isinstance(entries, list):
        raise ManifestError("'nameserver' must be an array of tables")
    if not entries:
        warnings.warn("manifest lists no nameservers", stacklevel=3)

    nameservers: dict[str, list[ZoneSource]] = {}
    owner_of: dict[Path, str] = {}
    for entry in entries:
        if "name" not in entry:
            raise ManifestError("nameserver entry without a name")
        try:
            ns = names.to_text(names.from_text(entry["name"]))
        except InvalidName as exc:
            raise ManifestError(f"bad nameserver name {entry['name']!r}: {exc}") from None
        if ns in nameservers:
            raise ManifestError(f"duplicate nameserver entry: {ns}")
        sources = []
        for item in entry.get("zonefiles", []):
            if isinstance(item, str):
                rel, origin = item, None
            else:
                rel, origin = item["path"], item.get("origin")
            zpath = (base_dir / rel).resolve()
            if not zpath.is_file():
                raise ManifestError(f"zonefile not found: {zpath}")
            if zpath in owner_of and not allow_shared:
                raise ManifestError(
                    f"zonefile {zpath} listed under both {owner_of[zpath]} and {ns}; "
                    "set allow_shared_zones = true to permit this"
                )
            owner_of.setdefault(zpath, ns)
            sources.append(ZoneSource(zpath, names.from_text(origin) if origin else None))
        nameservers[ns] = sources
    return Manifest(nameservers, config, path, allow_shared)
