"""Shared domain types: onion addresses, canonical URIs and 14-digit timestamps.

Everything here is immutable and side-effect free.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from email.utils import format_datetime, parsedate_to_datetime
from typing import Optional, Union
from urllib.parse import urlsplit

BASE32_ALPHABET = frozenset("abcdefghijklmnopqrstuvwxyz234567")
DEFAULT_PORTS = {"http": 80, "https": 443}


class OnionError(ValueError):
    """Base class for onion address validation failures."""


class NotOnion(OnionError):
    pass


class BadLength(OnionError):
    pass


class BadAlphabet(OnionError):
    pass


class UriError(ValueError):
    pass


class UnsupportedScheme(UriError):
    pass


class Unparseable(UriError):
    pass


class OnionVersion(enum.Enum):
    V2 = 2
    V3 = 3


@dataclass(frozen=True, order=True)
class OnionAddress:
    label: str
    version: OnionVersion

    def __str__(self) -> str:
        return f"{self.label}.onion"


def validate_onion_address(hostname: str) -> OnionAddress:
    """Validate a bare ``<label>.onion`` hostname.

    Only length (16 for v2, 56 for v3) and the base32 alphabet are checked;
    the v3 checksum is not verified.
    """
    name = hostname.lower()
    if name.endswith("."):
        name = name[:-1]
    if not name.endswith(".onion"):
        raise NotOnion(hostname)
    label = name[: -len(".onion")]
    if len(label) == 16:
        version = OnionVersion.V2
    elif len(label) == 56:
        version = OnionVersion.V3
    else:
        raise BadLength(f"{hostname}: label has {len(label)} characters")
    bad = set(label) - BASE32_ALPHABET
    if bad:
        raise BadAlphabet(f"{hostname}: {''.join(sorted(bad))!r}")
    return OnionAddress(label, version)


def onion_from_host(host: str) -> OnionAddress:
    """Extract the registrable onion address from a host, ignoring subdomains.

    ``www.nytimes3xbfgragh.onion`` yields ``nytimes3xbfgragh.onion``.
    """
    name = host.lower().rstrip(".")
    if not name.endswith(".onion"):
        raise NotOnion(host)
    labels = name.split(".")
    if len(labels) < 2 or not labels[-2]:
        raise BadLength(host)
    return validate_onion_address(labels[-2] + ".onion")


def is_onion_host(host: str) -> bool:
    return host.lower().rstrip(".").endswith(".onion")


@dataclass(frozen=True)
class CanonicalUri:
    scheme: str
    host: str
    port: Optional[int] = None
    path: str = "/"
    query: Optional[str] = None

    def __str__(self) -> str:
        netloc = self.host if self.port is None else f"{self.host}:{self.port}"
        uri = f"{self.scheme}://{netloc}{self.path}"
        if self.query is not None:
            uri += "?" + self.query
        return uri

    @property
    def onion(self) -> Optional[OnionAddress]:
        """The registrable onion address of the host, or None for surface hosts."""
        if not is_onion_host(self.host):
            return None
        return onion_from_host(self.host)

    @property
    def authority(self) -> str:
        return self.host if self.port is None else f"{self.host}:{self.port}"

    def root(self) -> "CanonicalUri":
        return CanonicalUri(self.scheme, self.host, self.port)

    def with_host(self, host: str) -> "CanonicalUri":
        return replace(self, host=host.lower())

    def request_target(self) -> str:
        return self.path if self.query is None else f"{self.path}?{self.query}"


def canonicalize_uri(raw: Union[str, CanonicalUri]) -> CanonicalUri:
    """Canonicalize an absolute http(s) URI.

    Host is lowercased, default ports and fragments are dropped, an empty
    path becomes ``/``. The query string is kept verbatim (not sorted).
    """
    if isinstance(raw, CanonicalUri):
        return raw
    text = raw.strip()
    try:
        parts = urlsplit(text)
        port = parts.port
    except ValueError as exc:
        raise Unparseable(f"{raw!r}: {exc}") from None
    scheme = parts.scheme.lower()
    if not scheme:
        raise Unparseable(f"{raw!r}: not an absolute URI")
    if scheme not in DEFAULT_PORTS:
        raise UnsupportedScheme(scheme)
    host = (parts.hostname or "").rstrip(".")
    if not host or any(c.isspace() for c in host):
        raise Unparseable(f"{raw!r}: missing or invalid host")
    if port == DEFAULT_PORTS[scheme]:
        port = None
    path = parts.path or "/"
    if not path.startswith("/"):
        path = "/" + path
    query = parts.query or None
    return CanonicalUri(scheme, host.lower(), port, path, query)


class Timestamp14(str):
    """A ``YYYYMMDDHHMMSS`` GMT timestamp.

    Subclasses ``str`` so that lexicographic order is chronological order and
    values serialize to JSON unchanged.
    """

    FORMAT = "%Y%m%d%H%M%S"
    _RE = re.compile(r"^\d{14}$")

    def __new__(cls, value: str) -> "Timestamp14":
        if isinstance(value, Timestamp14):
            return value
        if not isinstance(value, str) or not cls._RE.match(value):
            raise ValueError(f"not a 14-digit timestamp: {value!r}")
        try:
            datetime.strptime(value, cls.FORMAT)
        except ValueError:
            raise ValueError(f"not a valid calendar datetime: {value!r}") from None
        return super().__new__(cls, value)

    @classmethod
    def from_datetime(cls, dt: datetime) -> "Timestamp14":
        if dt.tzinfo is not None:
            dt = dt.astimezone(timezone.utc)
        return cls(dt.strftime(cls.FORMAT))

    @classmethod
    def from_rfc1123(cls, text: str) -> "Timestamp14":
        return cls.from_datetime(parsedate_to_datetime(text))

    @classmethod
    def from_iso(cls, text: str) -> "Timestamp14":
        return cls.from_datetime(datetime.fromisoformat(text.replace("Z", "+00:00")))

    @classmethod
    def now(cls) -> "Timestamp14":
        return cls.from_datetime(datetime.now(timezone.utc))

    def to_datetime(self) -> datetime:
        return datetime.strptime(self, self.FORMAT).replace(tzinfo=timezone.utc)

    def rfc1123(self) -> str:
        return format_datetime(self.to_datetime(), usegmt=True)

    def iso(self) -> str:
        return self.to_datetime().strftime("%Y-%m-%dT%H:%M:%SZ")

    def shifted(self, seconds: float) -> "Timestamp14":
        return Timestamp14.from_datetime(self.to_datetime() + timedelta(seconds=seconds))

    def seconds_to(self, other: "Timestamp14") -> float:
        return (Timestamp14(other).to_datetime() - self.to_datetime()).total_seconds()


def with_onion(uri: CanonicalUri, onion: OnionAddress) -> CanonicalUri:
    """Swap the registrable onion of ``uri``'s host, keeping any subdomain."""
    old = str(uri.onion)
    return uri.with_host(uri.host[: -len(old)] + str(onion))
