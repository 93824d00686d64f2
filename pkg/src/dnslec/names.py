"""Domain-name helpers.

Names are tuples of lowercase labels written left to right, so
``www.went.com.`` is ``("www", "went", "com")``.  Level 1 is the rightmost
label (the TLD).
"""

from __future__ import annotations

Name = tuple[str, ...]

WILDCARD = "*"
MAX_LABEL_OCTETS = 63
MAX_NAME_OCTETS = 255


class InvalidName(ValueError):
    """Raised for syntactically invalid domain names."""


def wire_length(name: Name) -> int:
    return sum(len(label.encode()) + 1 for label in name) + 1


def check_name(name: Name) -> None:
    if not name:
        raise InvalidName("empty name")
    for label in name:
        if not label:
            raise InvalidName("empty label")
        if len(label.encode()) > MAX_LABEL_OCTETS:
            raise InvalidName(f"label longer than {MAX_LABEL_OCTETS} octets: {label[:20]}...")
    if wire_length(name) > MAX_NAME_OCTETS:
        raise InvalidName(f"name longer than {MAX_NAME_OCTETS} octets")
    if WILDCARD in name[1:]:
        raise InvalidName("wildcard label allowed only in leftmost position")


def from_text(text: str, origin: Name | None = None) -> Name:
    """Parse ``text`` into a name; relative names are appended to ``origin``."""
    text = text.strip()
    if text == "@":
        if origin is None:
            raise InvalidName("'@' used without an origin")
        return origin
    absolute = text.endswith(".")
    body = text[:-1] if absolute else text
    if body == "":
        if absolute:
            raise InvalidName("the root name is not a valid owner here")
        raise InvalidName("empty name")
    labels = tuple(label.lower() for label in body.split("."))
    if any(label == "" for label in labels):
        raise InvalidName(f"empty label in {text!r}")
    if not absolute:
        if origin is None:
            raise InvalidName(f"relative name {text!r} without an origin")
        labels = labels + origin
    check_name(labels)
    return labels


def to_text(name: Name) -> str:
    return ".".join(name) + "." if name else "."


def is_wildcard(name: Name) -> bool:
    return bool(name) and name[0] == WILDCARD


def base(name: Name) -> Name:
    """The name a record actually covers: the parent for a wildcard owner."""
    return name[1:] if is_wildcard(name) else name


def is_under(name: Name, ancestor: Name) -> bool:
    """True when ``name`` equals ``ancestor`` or is one of its subdomains."""
    k = len(ancestor)
    return len(name) >= k and (k == 0 or name[-k:] == ancestor)


def is_strictly_under(name: Name, ancestor: Name) -> bool:
    return len(name) > len(ancestor) and is_under(name, ancestor)


def related(a: Name, b: Name) -> bool:
    """True unless the two subtrees are provably disjoint."""
    return is_under(a, b) or is_under(b, a)


def replace_suffix(name: Name, old: Name, new: Name) -> Name:
    if not is_strictly_under(name, old):
        raise ValueError(f"{to_text(name)} is not below {to_text(old)}")
    return name[: len(name) - len(old)] + new
