import re
from datetime import datetime, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st

from onionarchive.core import (
    BadAlphabet,
    BadLength,
    CanonicalUri,
    NotOnion,
    OnionVersion,
    Timestamp14,
    UnsupportedScheme,
    Unparseable,
    canonicalize_uri,
    onion_from_host,
    validate_onion_address,
    with_onion,
)

from conftest import ONION_A, ONION_B, ONION_V3

# independent reference for address validity
ONION_RE = re.compile(r"^([a-z2-7]{16}|[a-z2-7]{56})\.onion$")


def test_v2_and_v3_addresses():
    assert validate_onion_address(ONION_A).version is OnionVersion.V2
    assert validate_onion_address(ONION_V3).version is OnionVersion.V3
    assert str(validate_onion_address("BFNEWS3U2OX4M4TY.onion")) == ONION_A


@pytest.mark.parametrize("host, exc", [
    ("example.com", NotOnion),
    ("short.onion", BadLength),
    ("bfnews3u2ox4m4t.onion", BadLength),
    ("bfnews3u2ox4m4t1.onion", BadAlphabet),
    ("bfnews3u2ox4m4t8.onion", BadAlphabet),
])
def test_invalid_addresses(host, exc):
    with pytest.raises(exc):
        validate_onion_address(host)


@given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789", min_size=14, max_size=58))
def test_validation_agrees_with_regex(label):
    host = label + ".onion"
    try:
        validate_onion_address(host)
        ok = True
    except (BadLength, BadAlphabet):
        ok = False
    assert ok == bool(ONION_RE.match(host))


def test_subdomain_reduces_to_registrable_onion():
    assert str(onion_from_host("www." + ONION_B)) == ONION_B
    with pytest.raises(NotOnion):
        onion_from_host("www.example.com")


def test_canonicalize_basics():
    u = canonicalize_uri("HTTP://BFNews3u2ox4m4ty.onion:80#frag")
    assert str(u) == f"http://{ONION_A}/"
    assert canonicalize_uri(f"https://{ONION_A}:443/a?b=2&a=1").query == "b=2&a=1"
    assert canonicalize_uri(f"http://{ONION_A}:8080/x").port == 8080
    assert str(u.onion) == ONION_A
    assert canonicalize_uri("http://example.com/").onion is None


@pytest.mark.parametrize("raw, exc", [
    ("ftp://x.onion/", UnsupportedScheme),
    ("not a uri", Unparseable),
    ("http://", Unparseable),
    ("http://host:99999/", Unparseable),
])
def test_canonicalize_rejects(raw, exc):
    with pytest.raises(exc):
        canonicalize_uri(raw)


uris = st.builds(
    lambda scheme, host, port, path, q: f"{scheme}://{host}{port}{path}{q}",
    st.sampled_from(["http", "https", "HTTP"]),
    st.sampled_from([ONION_A, ONION_B.upper(), "www." + ONION_A, "Example.COM"]),
    st.sampled_from(["", ":80", ":443", ":8080"]),
    st.sampled_from(["", "/", "/a/b", "/%7Euser"]),
    st.sampled_from(["", "?x=1", "?b=2&a=1", "#top"]),
)


@given(uris)
def test_canonicalize_idempotent(raw):
    once = canonicalize_uri(raw)
    assert canonicalize_uri(str(once)) == once
    assert once.host == once.host.lower()
    assert once.path.startswith("/")


def test_with_onion_keeps_subdomain_and_path():
    u = canonicalize_uri(f"http://www.{ONION_A}/p?q=1")
    moved = with_onion(u, validate_onion_address(ONION_B))
    assert str(moved) == f"http://www.{ONION_B}/p?q=1"


def test_root_and_request_target():
    u = CanonicalUri("http", ONION_A, 8080, "/a", "b=1")
    assert str(u.root()) == f"http://{ONION_A}:8080/"
    assert u.request_target() == "/a?b=1"


def test_timestamp_roundtrips():
    t = Timestamp14("20170102030405")
    assert t.iso() == "2017-01-02T03:04:05Z"
    assert Timestamp14.from_rfc1123(t.rfc1123()) == t
    assert Timestamp14.from_iso("2017-01-02T03:04:05Z") == t
    assert t.shifted(3600) == "20170102040405"
    assert t.seconds_to("20170102040405") == 3600


@pytest.mark.parametrize("bad", ["2017", "20171302000000", "2017010203040x", 20170102030405])
def test_timestamp_rejects(bad):
    with pytest.raises(ValueError):
        Timestamp14(bad)


@given(st.datetimes(min_value=datetime(1990, 1, 1), max_value=datetime(2099, 1, 1)),
       st.datetimes(min_value=datetime(1990, 1, 1), max_value=datetime(2099, 1, 1)))
def test_timestamp_order_is_chronological(a, b):
    ta = Timestamp14.from_datetime(a.replace(tzinfo=timezone.utc))
    tb = Timestamp14.from_datetime(b.replace(tzinfo=timezone.utc))
    assert (ta < tb) == (a.replace(microsecond=0) < b.replace(microsecond=0))
