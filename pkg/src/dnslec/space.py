"""Symbolic query spaces.

A query is a ``(qname, qtype)`` pair.  Each name level (level 1 is the TLD)
owns a small block of decision-diagram variables holding an integer label
code; the record type gets one more block.  Codes ``0`` and ``1`` are
reserved in every label map: ``ABSENT`` marks levels beyond the end of a
name, ``OTHER`` stands for any label the map does not know.  Code values that
no label has claimed yet behave exactly like ``OTHER``; no predicate ever
distinguishes them, which is what lets the incremental path hand them out to
new labels later without touching existing predicates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

try:
    from dd import cudd as _dd

    BACKEND = "cudd"
except ImportError:  # pragma: no cover - exercised only without the C extension
    from dd import autoref as _dd

    BACKEND = "autoref"

from . import names
from .ingest import SUPPORTED_TYPES, ResourceRecord
from .names import Name

ABSENT = 0
OTHER = 1
FIRST_LABEL_CODE = 2
OTHER_TYPE = 0
OTHER_TYPE_WITNESS = "TYPE65534"

Predicate = _dd.Function


class NameTooLong(ValueError):
    pass


class RebuildRequired(Exception):
    """The codec cannot absorb a change without re-encoding everything."""


def label_bits(n_labels: int) -> int:
    return max(1, (n_labels + 1).bit_length())


def type_bits(n_types: int) -> int:
    return max(1, n_types.bit_length())


def _dname_shift_levels(records: Iterable[ResourceRecord]) -> list[int]:
    """Lowest level each level-shifting DNAME needs to come from a shared map."""
    out = []
    for rec in records:
        if rec.rtype == "DNAME":
            src, dst = len(rec.rname), len(rec.target)
            if src != dst:
                out.append(min(src, dst) + 1)
    return out


@dataclass
class LabelCodec:
    max_labels: int
    d_share: int
    level_maps: list[dict[str, int]]
    level_bits: list[int]
    type_map: dict[str, int]
    type_bits: int
    observed_labels: int = 0
    _witness: dict[int, str] = field(default_factory=dict, repr=False, compare=False)

    @property
    def shared_map(self) -> dict[str, int] | None:
        if self.d_share > self.max_labels:
            return None
        return self.level_maps[self.d_share - 1]

    def label_map(self, level: int) -> dict[str, int]:
        return self.level_maps[level - 1]

    def code(self, level: int, label: str) -> int:
        return self.level_maps[level - 1].get(label, OTHER)

    def label(self, level: int, code: int) -> str | None:
        for lab, c in self.level_maps[level - 1].items():
            if c == code:
                return lab
        return None

    def type_code(self, rtype: str) -> int:
        return self.type_map.get(rtype, OTHER_TYPE)

    def rtype(self, code: int) -> str:
        for name, c in self.type_map.items():
            if c == code:
                return name
        return OTHER_TYPE_WITNESS

    def other_witness(self, level: int) -> str:
        """A label guaranteed absent from the map at ``level``."""
        mp = self.level_maps[level - 1]
        cached = self._witness.get(level)
        if cached is not None and cached not in mp:
            return cached
        i = 0
        while f"zz-other{i}" in mp:
            i += 1
        self._witness[level] = f"zz-other{i}"
        return self._witness[level]

    def variable_count(self) -> int:
        return sum(self.level_bits) + self.type_bits

    def distinct_labels(self) -> int:
        seen = set()
        for mp in self.level_maps:
            seen.update(mp)
        return len(seen)

    # growth used by the incremental path -------------------------------
    def ensure_label(self, level: int, label: str) -> bool:
        """Give ``label`` a code at ``level`` if it lacks one; True if added."""
        mp = self.level_maps[level - 1]
        if label in mp:
            return False
        code = len(mp) + FIRST_LABEL_CODE
        if code >= 1 << self.level_bits[level - 1]:
            raise RebuildRequired(f"no spare code for label {label!r} at level {level}")
        mp[label] = code
        return True

    def ensure_type(self, rtype: str) -> bool:
        if rtype in self.type_map:
            return False
        code = len(self.type_map) + 1
        if code >= 1 << self.type_bits:
            raise RebuildRequired(f"no spare code for record type {rtype}")
        self.type_map[rtype] = code
        return True

    def check_record(self, rec: ResourceRecord) -> None:
        """Raise RebuildRequired unless ``rec`` fits the frozen layout."""
        for nm in encoded_names(rec):
            if len(nm) > self.max_labels:
                raise RebuildRequired(f"{names.to_text(nm)} is longer than max_labels={self.max_labels}")
        for level in _dname_shift_levels([rec]):
            if level < self.d_share:
                raise RebuildRequired(f"DNAME {rec} needs a shared map from level {level}")
        for nm in encoded_names(rec):
            for level, lab in enumerate(reversed(nm), start=1):
                mp = self.level_maps[level - 1]
                if lab not in mp and len(mp) + FIRST_LABEL_CODE >= 1 << self.level_bits[level - 1]:
                    raise RebuildRequired(f"no spare code for label {lab!r} at level {level}")
        if rec.rtype not in self.type_map and len(self.type_map) + 1 >= 1 << self.type_bits:
            raise RebuildRequired(f"no spare code for record type {rec.rtype}")

    def absorb(self, rec: ResourceRecord) -> None:
        self.check_record(rec)
        for nm in encoded_names(rec):
            for level, lab in enumerate(reversed(nm), start=1):
                self.ensure_label(level, lab)
        self.ensure_type(rec.rtype)

    # persistence ---------------------------------------------------------
    def to_dict(self) -> dict:
        shared = self.shared_map
        return {
            "max_labels": self.max_labels,
            "d_share": self.d_share,
            "level_maps": [mp for mp in self.level_maps[: min(self.d_share - 1, self.max_labels)]],
            "shared_map": shared,
            "level_bits": self.level_bits,
            "type_map": self.type_map,
            "type_bits": self.type_bits,
            "observed_labels": self.observed_labels,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LabelCodec":
        maps = [dict(mp) for mp in data["level_maps"]]
        shared = data.get("shared_map")
        if shared is not None:
            shared = dict(shared)
            maps += [shared] * (data["max_labels"] - len(maps))
        return cls(
            max_labels=data["max_labels"],
            d_share=data["d_share"],
            level_maps=maps,
            level_bits=list(data["level_bits"]),
            type_map=dict(data["type_map"]),
            type_bits=data["type_bits"],
            observed_labels=data.get("observed_labels", 0),
        )

    def same_coding(self, other: "LabelCodec") -> bool:
        return self.to_dict() == other.to_dict()


def encoded_names(rec: ResourceRecord) -> list[Name]:
    """Names whose labels get codes: the owner (minus a wildcard label) and rewrite targets."""
    out = [names.base(rec.rname)]
    if rec.rtype in ("CNAME", "DNAME"):
        out.append(rec.target)
    return out


def encode_labels(records: Iterable[ResourceRecord], rl: int = 4, d_share: int | str = "auto") -> LabelCodec:
    """Assign integer codes to every label, rightmost label first, records in order."""
    records = list(records)
    n = 0
    for rec in records:
        n = max(n, len(rec.rname))
        if rec.rtype in ("CNAME", "DNAME"):
            n = max(n, len(rec.target))
    max_labels = max(1, n + rl)

    needed = _dname_shift_levels(records)
    auto = min(needed) if needed else max_labels + 1
    if d_share == "auto":
        share_from = auto
    else:
        share_from = int(d_share)
        if share_from > auto:
            raise ValueError(f"d_share={share_from} is too high: DNAME records shift levels from level {auto}")
    share_from = min(share_from, max_labels + 1)

    shared: dict[str, int] = {}
    maps = [dict() if level < share_from else shared for level in range(1, max_labels + 1)]
    types = {t: i for i, t in enumerate(SUPPORTED_TYPES, start=1)}

    for rec in records:
        for nm in encoded_names(rec):
            for level, lab in enumerate(reversed(nm), start=1):
                mp = maps[level - 1]
                if lab not in mp:
                    mp[lab] = len(mp) + FIRST_LABEL_CODE
    for extra in sorted({r.rtype for r in records} - set(types)):
        types[extra] = len(types) + 1

    bits = [label_bits(len(mp)) for mp in maps]
    return LabelCodec(
        max_labels=max_labels,
        d_share=share_from,
        level_maps=maps,
        level_bits=bits,
        type_map=types,
        type_bits=type_bits(len(types)),
        observed_labels=n,
    )


class QuerySpace:
    """A decision-diagram manager laid out for one LabelCodec."""

    def __init__(self, codec: LabelCodec):
        self.codec = codec
        self.bdd = _dd.BDD()
        self.bdd.configure(reordering=False)
        self.level_vars: list[list[str]] = [
            [f"l{level}_{b}" for b in range(bits)] for level, bits in enumerate(codec.level_bits, start=1)
        ]
        self.type_vars = [f"t_{b}" for b in range(codec.type_bits)]
        self.all_vars = [v for block in self.level_vars for v in block] + self.type_vars
        self.name_vars = [v for block in self.level_vars for v in block]
        self.bdd.declare(*self.all_vars)
        self.false = self.bdd.false
        self.true = self.bdd.true
        self._cube_cache: dict[tuple[int, int], Predicate] = {}
        self._type_cache: dict[int, Predicate] = {}
        self.wellformed = self._wellformed()
        self.full = self.wellformed

    @property
    def max_labels(self) -> int:
        return self.codec.max_labels

    def variable_count(self) -> int:
        return len(self.bdd.vars)

    # elementary constraints ---------------------------------------------
    def _bits_cube(self, variables: Sequence[str], value: int) -> Predicate:
        width = len(variables)
        u = self.true
        for i, var in enumerate(variables):
            bit = (value >> (width - 1 - i)) & 1
            lit = self.bdd.var(var)
            u &= lit if bit else ~lit
        return u

    def level_is(self, level: int, code: int) -> Predicate:
        key = (level, code)
        u = self._cube_cache.get(key)
        if u is None:
            u = self._bits_cube(self.level_vars[level - 1], code)
            self._cube_cache[key] = u
        return u

    def absent(self, level: int) -> Predicate:
        if level > self.max_labels:
            return self.true
        return self.level_is(level, ABSENT)

    def present(self, level: int) -> Predicate:
        if level > self.max_labels:
            return self.false
        return ~self.level_is(level, ABSENT)

    def other_range(self, level: int) -> Predicate:
        mp = self.codec.label_map(level)
        # maps only grow, so their size identifies the current range
        key = ("other", level, len(mp))
        u = self._cube_cache.get(key)
        if u is None:
            u = ~self.level_is(level, ABSENT)
            for code in mp.values():
                u &= ~self.level_is(level, code)
            self._cube_cache[key] = u
        return u

    def label_at(self, level: int, label: str) -> Predicate:
        code = self.codec.label_map(level).get(label)
        if code is None:
            return self.other_range(level)
        return self.level_is(level, code)

    def type_is(self, code: int) -> Predicate:
        u = self._type_cache.get(code)
        if u is None:
            u = self._bits_cube(self.type_vars, code)
            self._type_cache[code] = u
        return u

    def other_type_range(self) -> Predicate:
        key = ("other", len(self.codec.type_map))
        u = self._type_cache.get(key)
        if u is None:
            u = self.true
            for code in self.codec.type_map.values():
                u &= ~self.type_is(code)
            self._type_cache[key] = u
        return u

    def types_pred(self, types: Iterable[str] | None) -> Predicate:
        """Predicate over the type block; ``None`` means every type."""
        if types is None:
            return self.true
        u = self.false
        for t in types:
            code = self.codec.type_map.get(t)
            u |= self.other_type_range() if code is None else self.type_is(code)
        return u

    def types_except(self, *excluded: str) -> Predicate:
        return ~self.types_pred(excluded)

    def _wellformed(self) -> Predicate:
        n = self.max_labels
        u = self.present(1)
        for level in range(1, n):
            u &= ~self.absent(level) | self.absent(level + 1)
        return u

    # query-set constructors ---------------------------------------------
    def name_prefix(self, name: Name) -> Predicate:
        """Levels 1..len(name) hold exactly the labels of ``name``."""
        if len(name) > self.max_labels:
            raise NameTooLong(f"{names.to_text(name)} has more than {self.max_labels} labels")
        u = self.true
        for level, lab in enumerate(reversed(name), start=1):
            u &= self.label_at(level, lab)
        return u

    def get_space(self, rname: Name, types: Iterable[str] | Predicate | None = None, flag: int = 0) -> Predicate:
        """Queries for ``rname`` (flag 0), its subtree (1) or its proper subdomains (2)."""
        if flag not in (0, 1, 2):
            raise ValueError("flag must be 0, 1 or 2")
        if names.is_wildcard(rname):
            rname, flag = rname[1:], 2
        u = self.name_prefix(rname) & self.wellformed
        depth = len(rname)
        if flag == 0:
            u &= self.absent(depth + 1)
        elif flag == 2:
            u &= self.present(depth + 1)
        if isinstance(types, Predicate):
            return u & types
        return u & self.types_pred(types)

    def all_names(self, types: Iterable[str] | None = None) -> Predicate:
        return self.wellformed & self.types_pred(types)

    # membership -----------------------------------------------------------
    def assignment(self, qname: Name, qtype: str) -> dict[str, bool]:
        if len(qname) > self.max_labels:
            raise NameTooLong(f"{names.to_text(qname)} has more than {self.max_labels} labels")
        out: dict[str, bool] = {}
        labels = list(reversed(qname))
        for level, variables in enumerate(self.level_vars, start=1):
            code = self.codec.code(level, labels[level - 1]) if level <= len(labels) else ABSENT
            width = len(variables)
            for i, var in enumerate(variables):
                out[var] = bool((code >> (width - 1 - i)) & 1)
        tcode = self.codec.type_code(qtype)
        width = len(self.type_vars)
        for i, var in enumerate(self.type_vars):
            out[var] = bool((tcode >> (width - 1 - i)) & 1)
        return out

    def contains(self, p: Predicate, qname: Name, qtype: str) -> bool:
        return self.bdd.let(self.assignment(qname, qtype), p) == self.true

    # projections and rewrites ---------------------------------------------
    def types_of(self, p: Predicate) -> Predicate:
        """Forget the name: every query whose type occurs somewhere in ``p``."""
        return self.bdd.exist(self.name_vars, p)

    def rewrite_cname(self, p: Predicate, target: Name) -> Predicate:
        """Replace every name in ``p`` by ``target``, keeping the types."""
        if p == self.false:
            return p
        return self.types_of(p) & self.get_space(target, None, 0)

    def _shift(self, p: Predicate, src_len: int, delta: int) -> Predicate:
        """Move the label blocks above ``src_len`` by ``delta`` levels."""
        n = self.max_labels
        if delta == 0:
            return p
        if delta > 0:
            moving = range(src_len + 1, n - delta + 1)
        else:
            moving = range(src_len + 1, n + 1)
        rename = {}
        for level in moving:
            for a, b in zip(self.level_vars[level - 1], self.level_vars[level + delta - 1]):
                rename[a] = b
        return self.bdd.let(rename, p) if rename else p

    def rewrite_dname(self, p: Predicate, src: Name, dst: Name) -> tuple[Predicate, Predicate]:
        """Substitute suffix ``src`` with ``dst`` for every name in ``p``.

        Returns ``(rewritten, overflow)``; ``overflow`` is the part of the
        input whose rewritten name would exceed ``max_labels``.
        """
        n = self.max_labels
        p = p & self.get_space(src, None, 2)
        if p == self.false:
            return p, p
        ls, ld = len(src), len(dst)
        delta = ld - ls
        if delta != 0 and min(ls, ld) + 1 < self.codec.d_share:
            raise ValueError(
                f"DNAME {names.to_text(src)} -> {names.to_text(dst)} shifts levels below d_share={self.codec.d_share}"
            )
        overflow = self.false
        if delta > 0:
            overflow = p & self.present(n - delta + 1)
            p = p & ~overflow
            if p == self.false:
                return p, overflow
        drop = [v for level in range(1, ls + 1) for v in self.level_vars[level - 1]]
        if delta > 0:
            drop += [v for level in range(n - delta + 1, n + 1) for v in self.level_vars[level - 1]]
        u = self.bdd.exist(drop, p)
        u = self._shift(u, ls, delta)
        if delta < 0:
            for level in range(n + delta + 1, n + 1):
                u &= self.absent(level)
        u &= self.name_prefix(dst) & self.wellformed
        return u, overflow

    def dname_preimage(self, p: Predicate, src: Name, dst: Name) -> Predicate:
        """Queries below ``src`` that the DNAME ``src -> dst`` maps into ``p``."""
        image, _ = self.rewrite_dname(p, dst, src)
        return image

    # inspection -----------------------------------------------------------
    def decode(self, assignment: dict[str, bool]) -> tuple[list[int], int]:
        codes = []
        for variables in self.level_vars:
            value = 0
            for var in variables:
                value = (value << 1) | int(bool(assignment.get(var, False)))
            codes.append(value)
        tcode = 0
        for var in self.type_vars:
            tcode = (tcode << 1) | int(bool(assignment.get(var, False)))
        return codes, tcode

    def concrete(self, codes: list[int], tcode: int) -> tuple[Name, str]:
        """Turn decoded codes into a concrete query, using witnesses for OTHER codes."""
        labels = []
        for level, code in enumerate(codes, start=1):
            if code == ABSENT:
                break
            lab = self.codec.label(level, code)
            labels.append(lab if lab is not None else self.codec.other_witness(level))
        return tuple(reversed(labels)), self.codec.rtype(tcode)

    def pick(self, p: Predicate) -> tuple[Name, str] | None:
        """One concrete query in ``p``, preferring known labels and types."""
        if p == self.false:
            return None
        known = p & self._known_bias(p)
        source = known if known != self.false else p
        # walk down from the top variable; variables skipped on the way are free
        assignment = dict.fromkeys(self.all_vars, False)
        u = source
        while u != self.true:
            var = u.var
            low = self.bdd.let({var: False}, u)
            if low != self.false:
                u = low
            else:
                assignment[var] = True
                u = self.bdd.let({var: True}, u)
        return self.concrete(*self.decode(assignment))

    def _known_bias(self, p: Predicate) -> Predicate:
        key = ("known",) + tuple(len(mp) for mp in self.codec.level_maps) + (len(self.codec.type_map),)
        u = self._cube_cache.get(key)
        if u is None:
            u = self.true
            for level in range(1, self.max_labels + 1):
                u &= ~self.other_range(level)
            u &= ~self.other_type_range()
            self._cube_cache[key] = u
        return u

    def iter_queries(self, p: Predicate) -> Iterator[tuple[Name, str]]:
        """Every satisfying assignment of ``p`` as a concrete query.

        Unclaimed code values all decode to the same witness label, so the
        output may repeat queries; intended for tiny test codecs.
        """
        for assignment in self.bdd.pick_iter(p, care_vars=set(self.all_vars)):
            yield self.concrete(*self.decode(assignment))

    def count(self, p: Predicate) -> int:
        return int(self.bdd.count(p, nvars=len(self.all_vars)))


class PredicateCodec:
    """Serialize predicates of one manager as a shared node list."""

    def __init__(self, space: QuerySpace):
        self.space = space
        self.index: dict[Predicate, int] = {}
        self.nodes: list[list] = []
        self.var_pos = {v: i for i, v in enumerate(space.all_vars)}

    def ref(self, p: Predicate) -> int:
        bdd = self.space.bdd
        if p == bdd.false:
            return 0
        if p == bdd.true:
            return 1
        found = self.index.get(p)
        if found is not None:
            return found
        stack = [p]
        while stack:
            u = stack[-1]
            if u in self.index:
                stack.pop()
                continue
            var = u.var
            lo = bdd.let({var: False}, u)
            hi = bdd.let({var: True}, u)
            pending = [c for c in (lo, hi) if c != bdd.false and c != bdd.true and c not in self.index]
            if pending:
                stack.extend(pending)
                continue
            stack.pop()
            self.nodes.append([self.var_pos[var], self._id(lo), self._id(hi)])
            self.index[u] = len(self.nodes) + 1
        return self.index[p]

    def _id(self, u: Predicate) -> int:
        if u == self.space.bdd.false:
            return 0
        if u == self.space.bdd.true:
            return 1
        return self.index[u]

    def dump(self) -> dict:
        return {"vars": list(self.space.all_vars), "nodes": self.nodes}


def load_node_table(space: QuerySpace, data: dict) -> list[Predicate]:
    """Rebuild the node table written by PredicateCodec.dump()."""
    if list(data["vars"]) != space.all_vars:
        raise ValueError("predicate table was written for a different variable layout")
    bdd = space.bdd
    table: list[Predicate] = [bdd.false, bdd.true]
    for var_idx, lo, hi in data["nodes"]:
        table.append(bdd.ite(bdd.var(space.all_vars[var_idx]), table[hi], table[lo]))
    return table
