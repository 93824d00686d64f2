"""Random DNS configurations for tests and benchmarks.

A corpus is a TLD nameserver delegating second-level zones to a pool of
hosting nameservers.  Each zone gets an SOA, an apex NS, and random
records; a configurable share of them are CNAME/DNAME rewrites aimed at
other zones, which is what produces loops, blackholes and long chains.
Small vocabularies give toy fixtures whose query universe can be
enumerated outright.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import names
from .incremental import AddRecord, AddZonefile, Change, DeleteRecord, DeleteZonefile
from .ingest import ResourceRecord, Zonefile
from .names import Name

TLD_SERVER = "a.tld-servers.test."
SOA_RDATA = "ns.invalid. hostmaster.invalid. 1 7200 3600 1209600 3600"
PLAIN_TYPES = ("A", "AAAA", "MX", "TXT")


@dataclass
class SynthSpec:
    zones: int = 10
    records_per_zone: int = 20
    rewrite_density: float = 0.15
    nameservers: int = 3
    seed: int = 0
    vocab: int | None = None  # host-label vocabulary size; None means unbounded
    max_depth: int = 2  # extra labels below a zone origin
    tlds: int = 2
    wildcard_density: float = 0.05
    delegation_density: float = 0.03
    lame_density: float = 0.05

    @classmethod
    def toy(cls, seed: int, **overrides) -> "SynthSpec":
        base = dict(
            zones=2,
            records_per_zone=5,
            rewrite_density=0.4,
            nameservers=2,
            seed=seed,
            vocab=3,
            max_depth=1,
            tlds=1,
            wildcard_density=0.15,
            delegation_density=0.1,
            lame_density=0.2,
        )
        base.update(overrides)
        return cls(**base)


_TLD_NAMES = ("com", "net", "org", "io", "dev", "app", "info", "biz")


@dataclass
class Corpus:
    groups: dict[str, list[Zonefile]]
    origins: list[Name] = field(default_factory=list)

    def record_count(self) -> int:
        return sum(len(z.records) for zs in self.groups.values() for z in zs)

    def zone_count(self) -> int:
        return sum(len(zs) for zs in self.groups.values())


class Generator:
    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.rng = random.Random(spec.seed)
        self.tlds = [(t,) for t in _TLD_NAMES[: max(1, spec.tlds)]]
        self.servers = [f"ns{i}.hosting.test." for i in range(max(1, spec.nameservers))]
        if spec.vocab is None:
            self.hosts = [f"h{i}" for i in range(max(4, spec.records_per_zone))]
        else:
            self.hosts = ["www", "mail", "a", "b", "c", "d", "e", "f"][: spec.vocab]
        self.origins: list[Name] = []
        self._next_zone = 0

    # names ------------------------------------------------------------------
    def _zone_label(self) -> str:
        i = self._next_zone
        self._next_zone += 1
        if self.spec.vocab is None:
            return f"z{i}"
        return ["went", "example", "shop", "corp", "zone", "site"][i % 6] + ("" if i < 6 else str(i // 6))

    def new_origin(self) -> Name:
        return (self._zone_label(),) + self.rng.choice(self.tlds)

    def host_name(self, origin: Name, depth: int | None = None) -> Name:
        depth = self.rng.randint(0, self.spec.max_depth) if depth is None else depth
        return tuple(self.rng.choice(self.hosts) for _ in range(depth)) + origin

    def any_target(self) -> Name:
        if self.origins and self.rng.random() < 0.85:
            return self.host_name(self.rng.choice(self.origins))
        return self.host_name(("absent",) + self.rng.choice(self.tlds), self.rng.randint(0, 1))

    # records -----------------------------------------------------------------
    def plain_rdata(self, rtype: str) -> str:
        r = self.rng
        if rtype == "A":
            return f"192.0.2.{r.randint(1, 254)}"
        if rtype == "AAAA":
            return f"2001:db8::{r.randint(1, 0xFFFF):x}"
        if rtype == "MX":
            return f"{r.choice((10, 20))} {names.to_text(self.any_target())}"
        return f'"v={r.randint(0, 99)}"'

    def random_record(self, origin: Name, held: set[tuple[Name, str]]) -> ResourceRecord | None:
        r, spec = self.rng, self.spec
        owner = self.host_name(origin)
        if owner != origin and r.random() < spec.wildcard_density:
            owner = ("*",) + owner[1:]
        roll = r.random()
        if roll < spec.rewrite_density:
            rtype = "CNAME" if r.random() < 0.6 or names.is_wildcard(owner) else "DNAME"
            if owner == origin and rtype == "CNAME":
                return None
            if (owner, "CNAME") in held or (owner, "DNAME") in held:
                return None
            target = self.any_target() if rtype == "CNAME" else self.rng.choice(self.origins or [origin])
            if rtype == "DNAME" and names.is_under(target, owner):
                return None
            return ResourceRecord(owner, rtype, names.to_text(target))
        if roll < spec.rewrite_density + spec.delegation_density and owner != origin and not names.is_wildcard(owner):
            return ResourceRecord(owner, "NS", r.choice(self.servers))
        rtype = r.choice(PLAIN_TYPES)
        return ResourceRecord(owner, rtype, self.plain_rdata(rtype))

    def zonefile(self, origin: Name, server: str, count: int | None = None) -> Zonefile:
        count = self.spec.records_per_zone if count is None else count
        recs = [ResourceRecord(origin, "SOA", SOA_RDATA), ResourceRecord(origin, "NS", server)]
        held = {(origin, "SOA"), (origin, "NS")}
        tries = 0
        while len(recs) < count + 2 and tries < 20 * (count + 2):
            tries += 1
            rec = self.random_record(origin, held)
            if rec is None or rec in recs:
                continue
            recs.append(rec)
            held.add((rec.rname, rec.rtype))
        return Zonefile(origin, tuple(recs), f"<synth {names.to_text(origin)}>")

    # whole corpora -----------------------------------------------------------
    def corpus(self) -> Corpus:
        spec = self.spec
        self.origins = [self.new_origin() for _ in range(spec.zones)]
        hosted: dict[str, list[Zonefile]] = {s: [] for s in self.servers}
        delegations: dict[Name, list[ResourceRecord]] = {t: [] for t in self.tlds}
        for i, origin in enumerate(self.origins):
            server = self.servers[i % len(self.servers)]
            hosted[server].append(self.zonefile(origin, server))
            target = server
            if self.rng.random() < spec.lame_density and len(self.servers) > 1:
                target = self.rng.choice([s for s in self.servers if s != server])
            delegations[origin[1:]].append(ResourceRecord(origin, "NS", target))
        tld_zones = []
        for tld in self.tlds:
            recs = (ResourceRecord(tld, "SOA", SOA_RDATA), ResourceRecord(tld, "NS", TLD_SERVER)) + tuple(
                delegations[tld]
            )
            tld_zones.append(Zonefile(tld, recs, f"<synth {names.to_text(tld)}>"))
        groups = {TLD_SERVER: tld_zones}
        groups.update(hosted)
        return Corpus(groups, list(self.origins))

    # random edits ------------------------------------------------------------
    def record_change(self, groups: dict[str, list[Zonefile]]) -> Change | None:
        """A random add or delete of one record in a hosted zone."""
        candidates = [(ns, z) for ns, zs in groups.items() if ns != TLD_SERVER for z in zs]
        if not candidates:
            return None
        ns, zf = self.rng.choice(candidates)
        removable = [r for r in zf.records if r.rtype != "SOA"]
        if removable and self.rng.random() < 0.5:
            return DeleteRecord(zf.origin, self.rng.choice(removable), ns)
        held = {(r.rname, r.rtype) for r in zf.records}
        for _ in range(20):
            rec = self.random_record(zf.origin, held)
            if rec is not None:
                break
        else:
            return None
        if rec.rtype in ("CNAME", "DNAME") and (rec.rname, rec.rtype) in held:
            return None
        return AddRecord(zf.origin, rec, ns)

    def zone_change(self, groups: dict[str, list[Zonefile]]) -> Change:
        """Add a zone below an existing one (so zone-tier preemption kicks in) or delete one."""
        hosted = [(ns, z) for ns, zs in groups.items() if ns != TLD_SERVER for z in zs]
        if hosted and self.rng.random() < 0.4:
            ns, zf = self.rng.choice(hosted)
            return DeleteZonefile(ns, zf.origin)
        ns = self.rng.choice(self.servers)
        parents = [z.origin for z in groups.get(ns, [])] or self.origins or [self.tlds[0]]
        for _ in range(20):
            origin = (self.rng.choice(self.hosts),) + self.rng.choice(parents)
            if all(z.origin != origin for z in groups.get(ns, [])):
                break
        return AddZonefile(ns, self.zonefile(origin, ns, max(1, self.spec.records_per_zone // 2)))


def generate(spec: SynthSpec) -> Corpus:
    return Generator(spec).corpus()
