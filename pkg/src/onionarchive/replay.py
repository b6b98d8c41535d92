"""Shift-aware Wayback-style replay.

A URI-M whose exact URI-R was never captured is resolved through the
canonicalizer: first with the onion that was in use at the requested time,
then against every onion the site has ever used. TimeMaps aggregate the
captures of all of a site's onions.
"""
from __future__ import annotations

import logging
import re
import threading
from dataclasses import dataclass, field
from typing import List, Optional, Tuple
from urllib.parse import unquote, urljoin

from ._http import BackgroundServer, HttpError, JsonHandler
from .canonicalizer import UnknownUri
from .core import CanonicalUri, Timestamp14, canonicalize_uri, with_onion
from .crawler.links import is_html
from .service import CanonUnavailable
from .warc import CaptureRecord, CdxEntry, CdxIndex, NotCaptured, header_value, read_record_at

log = logging.getLogger(__name__)

IDENTITY = "id_"
LINK_FORMAT = "application/link-format"


class NotInArchive(LookupError):
    def __init__(self, target: str, tried: List[str]):
        super().__init__(f"{target} is not in the archive")
        self.target = target
        self.tried = tried


@dataclass(frozen=True)
class UriM:
    prefix: str
    timestamp: Timestamp14
    target: CanonicalUri
    modifier: str = ""

    def __str__(self) -> str:
        return f"{self.prefix}/{self.timestamp}{self.modifier}/{self.target}"

    @classmethod
    def parse(cls, text: str, prefix: str = "/replay") -> "UriM":
        if not text.startswith(prefix + "/"):
            raise ValueError(f"{text!r} does not start with {prefix}/")
        rest = text[len(prefix) + 1:]
        stamp, sep, target = rest.partition("/")
        m = re.fullmatch(r"(\d{14})([a-z]{2}_)?", stamp)
        if not sep or not m:
            raise ValueError(f"bad URI-M {text!r}")
        # some clients collapse the double slash of an embedded scheme
        target = re.sub(r"^(https?):/(?!/)", r"\1://", target)
        return cls(prefix, Timestamp14(m.group(1)), canonicalize_uri(target), m.group(2) or "")


@dataclass
class Memento:
    record: CaptureRecord
    entry: CdxEntry
    original: CanonicalUri
    trace: List[dict] = field(default_factory=list)

    @property
    def datetime(self) -> Timestamp14:
        return self.entry.timestamp


def _nearest(candidates: List[Tuple[CdxEntry, CanonicalUri]], at: Timestamp14):
    at_dt = at.to_datetime()
    return min(
        candidates,
        key=lambda c: (abs((c[0].timestamp.to_datetime() - at_dt).total_seconds()), c[0].timestamp),
    )


class ReplayEngine:
    """Resolution, TimeMaps and link rewriting over one CDX index snapshot."""

    def __init__(self, index: CdxIndex, canon=None, prefix: str = "/replay",
                 timemap_prefix: str = "/timemap/link", base_url: str = ""):
        self._index = index
        self.canon = canon
        self.prefix = prefix
        self.timemap_prefix = timemap_prefix
        self.base_url = base_url.rstrip("/")
        self._swap = threading.Lock()

    @property
    def index(self) -> CdxIndex:
        return self._index

    def reload(self, index: CdxIndex):
        with self._swap:
            self._index = index

    def _era_uris(self, target: CanonicalUri, trace: List[dict]) -> Optional[List[CanonicalUri]]:
        """``target`` moved onto every onion of its site, oldest first."""
        if self.canon is None or target.onion is None:
            return None
        try:
            timeline = self.canon.timeline_for(target.root())
        except (CanonUnavailable, UnknownUri) as exc:
            trace.append({"step": "timeline", "error": type(exc).__name__})
            return None
        out = []
        for e in timeline:
            u = with_onion(target, e.uri.onion)
            if u not in out:
                out.append(u)
        return out

    def lookup(self, target, timestamp) -> Tuple[CdxEntry, CanonicalUri, List[dict]]:
        """Find the capture a URI-M refers to; returns (entry, era URI, trace).

        The onion in use at ``timestamp`` is tried first, then ``target``
        itself, then the nearest capture across every onion of the site.
        """
        target = canonicalize_uri(target)
        ts = Timestamp14(timestamp)
        index = self._index
        trace: List[dict] = []
        tried: List[str] = []
        known = self.canon is not None and target.onion is not None

        if known:
            try:
                era_root = self.canon.uri_at(target.root(), ts)
            except (CanonUnavailable, UnknownUri) as exc:
                trace.append({"step": "era", "error": type(exc).__name__})
                known = False
            else:
                era = with_onion(target, era_root.onion)
                if era != target:
                    tried.append(str(era))
                    try:
                        entry = index.lookup(era, ts)
                        trace.append({"step": "era", "uri": str(era), "result": entry.timestamp})
                        return entry, era, trace
                    except NotCaptured:
                        trace.append({"step": "era", "uri": str(era), "result": None})

        tried.append(str(target))
        try:
            entry = index.lookup(target, ts)
            trace.append({"step": "direct", "uri": str(target), "result": entry.timestamp})
            return entry, target, trace
        except NotCaptured:
            trace.append({"step": "direct", "uri": str(target), "result": None})

        if known:
            eras = self._era_uris(target, trace) or []
            candidates = []
            for u in eras:
                if str(u) not in tried:
                    tried.append(str(u))
                try:
                    candidates.append((index.lookup(u, ts), u))
                except NotCaptured:
                    pass
            best = _nearest(candidates, ts) if candidates else None
            trace.append({"step": "all_eras", "uris": [str(u) for u in eras],
                          "result": best[0].timestamp if best else None})
            if best:
                return best[0], best[1], trace
        raise NotInArchive(str(target), tried)

    def resolve_memento(self, urim: UriM) -> Memento:
        entry, era, trace = self.lookup(urim.target, urim.timestamp)
        record = read_record_at(entry.filename, entry.offset, entry.length)
        return Memento(record, entry, era, trace)

    def timemap_url(self, target) -> str:
        return f"{self.base_url}{self.timemap_prefix}/{target}"

    def memento_headers(self, memento: Memento) -> List[Tuple[str, str]]:
        link = f'<{memento.original}>; rel="original", <{self.timemap_url(memento.original)}>; rel="timemap"; type="{LINK_FORMAT}"'
        return [("Memento-Datetime", memento.datetime.rfc1123()), ("Link", link)]

    def timemap_entries(self, target) -> Tuple[CanonicalUri, List[Tuple[CdxEntry, CanonicalUri]]]:
        target = canonicalize_uri(target)
        eras = self._era_uris(target, []) or [target]
        found = []
        for u in eras:
            found.extend((e, u) for e in self._index.captures(u))
        found.sort(key=lambda c: (c[0].timestamp, str(c[1])))
        return eras[-1], found

    def timemap(self, target) -> str:
        """RFC 7089 link-format TimeMap spanning every onion of the site."""
        target = canonicalize_uri(target)
        current, found = self.timemap_entries(target)
        if not found:
            raise NotInArchive(str(target), [str(target)])
        first, last = found[0][0].timestamp, found[-1][0].timestamp
        lines = [
            f'<{current}>; rel="original"',
            f'<{self.timemap_url(target)}>; rel="self"; type="{LINK_FORMAT}"; '
            f'from="{first.rfc1123()}"; until="{last.rfc1123()}"',
        ]
        for i, (entry, _) in enumerate(found):
            rel = "memento"
            if i == 0:
                rel = "first memento" if len(found) > 1 else "first last memento"
            elif i == len(found) - 1:
                rel = "last memento"
            urim = f"{self.base_url}{self.prefix}/{entry.timestamp}/{entry.original}"
            lines.append(f'<{urim}>; rel="{rel}"; datetime="{entry.timestamp.rfc1123()}"')
        return ",\n".join(lines) + "\n"

    def rewrite_links(self, html: bytes, context: UriM) -> bytes:
        return rewrite_links(html, context)


_TOKEN = re.compile(rb"<!--.*?-->|<([a-zA-Z][a-zA-Z0-9-]*)(?=[\s/>])[^>]*>", re.S)
_ATTR = re.compile(rb"""(\s(?:href|src)\s*=\s*)("[^"]*"|'[^']*'|[^\s"'>]+)""", re.I)
_SKIP_SCHEMES = ("javascript:", "mailto:", "data:", "tel:", "about:", "#")


def _rewrite_ref(ref: str, context: UriM) -> Optional[str]:
    stripped = ref.strip()
    if not stripped or stripped.lower().startswith(_SKIP_SCHEMES):
        return None
    if stripped.startswith(context.prefix + "/"):
        return None
    absolute = urljoin(str(context.target), stripped)
    if not absolute.lower().startswith(("http://", "https://")):
        return None
    return f"{context.prefix}/{context.timestamp}{context.modifier}/{absolute}"


def rewrite_links(html: bytes, context: UriM, content_type: str = "text/html") -> bytes:
    """Point href/src references at URI-Ms of the same timestamp.

    Only attribute values change; script and style bodies, comments and text
    are copied byte for byte. Non-HTML content passes through untouched.
    """
    if not is_html(content_type):
        return html

    def attr(m):
        raw = m.group(2)
        quote = raw[:1] if raw[:1] in (b'"', b"'") else b""
        value = raw[1:-1] if quote else raw
        new = _rewrite_ref(value.decode("latin-1"), context)
        if new is None:
            return m.group(0)
        return m.group(1) + quote + new.encode("latin-1") + quote

    out = []
    pos = 0
    while True:
        m = _TOKEN.search(html, pos)
        if m is None:
            break
        out.append(html[pos:m.start()])
        name = m.group(1)
        out.append(_ATTR.sub(attr, m.group(0)) if name else m.group(0))
        pos = m.end()
        if name and name.lower() in (b"script", b"style") and not m.group(0).endswith(b"/>"):
            close = re.compile(rb"</" + name + rb"\s*>", re.I).search(html, pos)
            end = close.start() if close else len(html)
            out.append(html[pos:end])
            pos = end
    out.append(html[pos:])
    return b"".join(out)


class ReplayHandler(JsonHandler):
    def do_GET(self):
        engine: ReplayEngine = self.server.app
        raw_path = self.path
        path, query = self.split()
        try:
            if path == "/api/v1/lookup":
                self._lookup(engine, query)
            elif raw_path.startswith(engine.prefix + "/"):
                self._replay(engine, raw_path)
            elif raw_path.startswith(engine.timemap_prefix + "/"):
                target = unquote(raw_path[len(engine.timemap_prefix) + 1:])
                target = re.sub(r"^(https?):/(?!/)", r"\1://", target)
                try:
                    body = engine.timemap(target)
                except ValueError as exc:
                    raise HttpError(400, "malformed", str(exc))
                self.send_body(200, body.encode("utf-8"), LINK_FORMAT)
            else:
                raise HttpError(404, "not_found", path)
        except NotInArchive as exc:
            self.send_json(404, {"error": "not_in_archive", "uri": exc.target, "tried": exc.tried})
        except HttpError as exc:
            self.send_json(exc.status, exc.body())

    do_HEAD = do_GET

    def _lookup(self, engine: ReplayEngine, query: dict):
        try:
            target = canonicalize_uri(query["uri"])
            ts = Timestamp14(query["timestamp"])
        except (KeyError, ValueError) as exc:
            raise HttpError(400, "malformed", f"uri and timestamp required: {exc}")
        entry, era, trace = engine.lookup(target, ts)
        self.send_json(200, {
            "uri": str(target), "timestamp": ts, "resolved_uri": str(era),
            "capture_timestamp": entry.timestamp, "trace": trace,
        })

    def _replay(self, engine: ReplayEngine, raw_path: str):
        try:
            urim = UriM.parse(raw_path, engine.prefix)
        except ValueError as exc:
            raise HttpError(400, "malformed", str(exc))
        memento = engine.resolve_memento(urim)
        record = memento.record
        body = record.payload
        ctype = record.content_type or "application/octet-stream"
        headers = engine.memento_headers(memento)
        context = UriM(engine.prefix, urim.timestamp, memento.original, urim.modifier)
        if urim.modifier != IDENTITY:
            body = rewrite_links(body, context, ctype)
        location = header_value(record.http_headers, "Location")
        if location:
            new = _rewrite_ref(location, context) if urim.modifier != IDENTITY else None
            headers.append(("Location", new or location))
        self.send_body(record.http_status or 200, body, ctype, headers)


class ReplayService(BackgroundServer):
    def __init__(self, engine: ReplayEngine, host: str = "127.0.0.1", port: int = 0):
        super().__init__(ReplayHandler, host, port)
        self.engine = engine
        self.httpd.app = engine
        if not engine.base_url:
            engine.base_url = self.url


def serve(engine: ReplayEngine, host: str = "127.0.0.1", port: int = 0) -> ReplayService:
    return ReplayService(engine, host, port).start()
