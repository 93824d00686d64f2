import pytest
from hypothesis import given
from hypothesis import strategies as st

from dnslec import names
from dnslec.names import InvalidName

label = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789-", min_size=1, max_size=10)
name = st.lists(label, min_size=1, max_size=5).map(tuple)


def test_relative_names_take_the_origin():
    assert names.from_text("www", ("went", "com")) == ("www", "went", "com")
    assert names.from_text("@", ("went", "com")) == ("went", "com")
    assert names.from_text("WWW.Went.COM.") == ("www", "went", "com")


@pytest.mark.parametrize("text", ["", ".", "a..b.", "www", "a.*.b."])
def test_invalid_names_are_rejected(text):
    with pytest.raises(InvalidName):
        names.from_text(text)


def test_length_limits():
    with pytest.raises(InvalidName):
        names.from_text("a" * 64 + ".")
    with pytest.raises(InvalidName):
        names.from_text(".".join(["abcdefghi"] * 26) + ".")
    assert names.from_text("a" * 63 + ".")


def test_wildcard_base_and_suffix_replacement():
    wild = names.from_text("*.went.com.")
    assert names.is_wildcard(wild)
    assert names.base(wild) == ("went", "com")
    assert names.replace_suffix(("a", "dname", "went", "net"), ("dname", "went", "net"), ("went", "com")) == (
        "a",
        "went",
        "com",
    )
    with pytest.raises(ValueError):
        names.replace_suffix(("went", "com"), ("went", "com"), ("x",))


@given(name)
def test_text_round_trip(n):
    assert names.from_text(names.to_text(n)) == n


@given(name, name)
def test_under_is_suffix_containment(a, b):
    joined = a + b
    assert names.is_under(joined, b)
    assert names.is_strictly_under(joined, b)
    assert names.related(joined, b) and names.related(b, joined)
    assert names.replace_suffix(joined, b, ("x",)) == a + ("x",)


@given(name)
def test_wire_length_counts_length_octets(n):
    assert names.wire_length(n) == sum(len(x) for x in n) + len(n) + 1
