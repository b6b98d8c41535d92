"""Static link extraction from HTML. Scripts are never executed."""
from __future__ import annotations

import re
from html.parser import HTMLParser
from typing import List, Tuple
from urllib.parse import urljoin

from ..core import CanonicalUri, canonicalize_uri

NAVIGATION = "navigation"
EMBEDDED = "embedded"

HTML_TYPES = ("text/html", "application/xhtml+xml")

# (tag, attribute) -> role
_LINK_ATTRS = {
    ("a", "href"): NAVIGATION,
    ("area", "href"): NAVIGATION,
    ("img", "src"): EMBEDDED,
    ("script", "src"): EMBEDDED,
    ("link", "href"): EMBEDDED,
    ("source", "src"): EMBEDDED,
}


def is_html(content_type: str) -> bool:
    return content_type.split(";", 1)[0].strip().lower() in HTML_TYPES


def _charset(content_type: str) -> str:
    m = re.search(r"charset=([\w.-]+)", content_type, re.I)
    return m.group(1) if m else "utf-8"


class _LinkParser(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.base = None
        self.found: List[Tuple[str, str]] = []

    def handle_starttag(self, tag, attrs):
        if tag == "base":
            for name, value in attrs:
                if name == "href" and value and self.base is None:
                    self.base = value.strip()
            return
        for name, value in attrs:
            role = _LINK_ATTRS.get((tag, name))
            if role is not None and value:
                self.found.append((value.strip(), role))

    handle_startendtag = handle_starttag


def extract_links(body: bytes, content_type: str, base: CanonicalUri) -> List[Tuple[CanonicalUri, str]]:
    """Outlinks of an HTML page as ``(uri, role)`` pairs, in document order.

    Relative references are resolved against ``base`` (or a ``<base href>``),
    non-http(s) and unparseable references are dropped, duplicates removed.
    Non-HTML bodies yield no links.
    """
    if not is_html(content_type):
        return []
    try:
        text = body.decode(_charset(content_type), errors="replace")
    except LookupError:
        text = body.decode("utf-8", errors="replace")
    parser = _LinkParser()
    try:
        parser.feed(text)
        parser.close()
    except Exception:  # html.parser is lenient; keep whatever was found
        pass
    base_uri = str(base)
    if parser.base:
        base_uri = urljoin(base_uri, parser.base)
    out = []
    seen = set()
    for ref, role in parser.found:
        try:
            uri = canonicalize_uri(urljoin(base_uri, ref.replace(" ", "%20")))
        except ValueError:
            continue
        key = (str(uri), role)
        if key not in seen:
            seen.add(key)
            out.append((uri, role))
    return out
