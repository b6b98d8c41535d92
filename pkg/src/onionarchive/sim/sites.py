"""Synthetic onion sites: page graphs, era schedules and their HTTP servers."""
from __future__ import annotations

import hashlib
import random
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler
from typing import Dict, List, Optional, Sequence, Tuple

from .._http import BackgroundServer
from ..core import BASE32_ALPHABET, Timestamp14, validate_onion_address

_ALPHABET = sorted(BASE32_ALPHABET)

CONTENT_TYPES = {
    ".css": "text/css",
    ".js": "application/javascript",
    ".png": "image/png",
    ".pdf": "application/pdf",
    ".txt": "text/plain; charset=utf-8",
}


def random_onion(rng: random.Random, v3: bool = False) -> str:
    return "".join(rng.choice(_ALPHABET) for _ in range(56 if v3 else 16)) + ".onion"


@dataclass
class SimPage:
    path: str
    links: List[str] = field(default_factory=list)
    requisites: List[str] = field(default_factory=list)
    script: bool = False
    redirect_to: Optional[str] = None
    status: int = 200


@dataclass
class SimSite:
    """A site whose onion address changes according to ``eras``.

    ``eras`` is a list of ``(onion, active_from)``; the era in force at time
    t is the last one with ``active_from <= t``.
    """

    name: str
    pages: Dict[str, SimPage]
    eras: List[Tuple[str, Timestamp14]]
    robots: Optional[str] = None

    def __post_init__(self):
        self.eras = [(str(validate_onion_address(o)), Timestamp14(t)) for o, t in self.eras]
        onions = [o for o, _ in self.eras]
        if len(set(onions)) != len(onions):
            raise ValueError(f"{self.name}: era addresses must be distinct")
        if [t for _, t in self.eras] != sorted(t for _, t in self.eras):
            raise ValueError(f"{self.name}: eras must be in time order")
        if "/" not in self.pages:
            raise ValueError(f"{self.name}: no root page")
        unreachable = set(self.pages) - self.reachable(len(self.pages))
        if unreachable:
            raise ValueError(f"{self.name}: pages not connected from root: {sorted(unreachable)[:5]}")

    def era_at(self, ts: Timestamp14) -> Optional[int]:
        idx = None
        for i, (_, start) in enumerate(self.eras):
            if start <= ts:
                idx = i
        return idx

    def onion_at(self, ts: Timestamp14) -> Optional[str]:
        idx = self.era_at(ts)
        return None if idx is None else self.eras[idx][0]

    def resources(self) -> List[str]:
        out = []
        for page in self.pages.values():
            for r in page.requisites:
                if r.startswith("/") and r not in out:
                    out.append(r)
        return out

    def render(self, path: str) -> Tuple[int, List[Tuple[str, str]], bytes]:
        """(status, headers, body) served for ``path``; deterministic."""
        if path == "/robots.txt":
            if self.robots is None:
                return 404, [("Content-Type", "text/plain")], b"no robots\n"
            return 200, [("Content-Type", "text/plain")], self.robots.encode()
        page = self.pages.get(path)
        if page is not None:
            if page.redirect_to is not None:
                return 302, [("Location", page.redirect_to), ("Content-Type", "text/html")], b"moved\n"
            return page.status, [("Content-Type", "text/html; charset=utf-8")], self._html(page)
        if path in self.resources():
            ext = path[path.rfind("."):]
            return 200, [("Content-Type", CONTENT_TYPES.get(ext, "application/octet-stream"))], self._resource(path)
        return 404, [("Content-Type", "text/html")], b"<html><body>not found</body></html>"

    def _html(self, page: SimPage) -> bytes:
        head = [f"<title>{self.name} {page.path}</title>"]
        for r in page.requisites:
            if r.endswith(".css"):
                head.append(f'<link rel="stylesheet" href="{r}">')
            elif r.endswith(".js"):
                head.append(f'<script src="{r}"></script>')
        if page.script:
            head.append("<script>var visits = 1; if (visits < 2) { document.title += ' *'; }</script>")
        body = [f"<h1>{self.name}: {page.path}</h1>"]
        for i, link in enumerate(page.links):
            body.append(f'<p><a href="{link}">link {i}</a></p>')
        for r in page.requisites:
            if not r.endswith((".css", ".js")):
                body.append(f'<img src="{r}" alt="">')
        html = "<!DOCTYPE html>\n<html><head>" + "".join(head) + "</head>\n<body>" + "\n".join(body) + "</body></html>\n"
        return html.encode("utf-8")

    def _resource(self, path: str) -> bytes:
        seed = hashlib.sha256(f"{self.name}{path}".encode()).digest()
        if path.endswith(".css"):
            return f"/* {self.name} */ body {{ color: #{seed.hex()[:6]}; }}\n".encode()
        if path.endswith(".js"):
            return f"console.log('{self.name}');\n".encode()
        return b"\x89PNG\r\n\x1a\n" + seed * 8

    def reachable(self, max_depth: int, robots_disallow: Sequence[str] = ()) -> set:
        """Pages reachable from ``/`` within ``max_depth`` navigation hops."""
        seen = {"/"}
        queue = deque([("/", 0)])
        while queue:
            path, depth = queue.popleft()
            page = self.pages.get(path)
            if page is None or depth >= max_depth:
                continue
            targets = list(page.links) + ([page.redirect_to] if page.redirect_to else [])
            for link in targets:
                if link.startswith("/") and link in self.pages and link not in seen:
                    if any(link.startswith(d) for d in robots_disallow):
                        continue
                    seen.add(link)
                    queue.append((link, depth + 1))
        return seen


def generate_site(name: str, eras, n_pages: int = 50, seed: int = 0, branching: int = 4,
                  script_pages: int = 0, robots: Optional[str] = None,
                  external_links: Sequence[str] = (), private_pages: int = 0) -> SimSite:
    """A connected site of ``n_pages`` pages, every page within 3 hops of root.

    Pages form a tree (breadth-first, ``branching`` children each) plus a few
    seeded cross links; each page references a shared stylesheet and its own
    image. ``private_pages`` extra pages live under ``/private/`` and are
    linked from the root.
    """
    rng = random.Random(seed)
    paths = ["/"] + [f"/p{i:03d}.html" for i in range(1, n_pages)]
    pages = {p: SimPage(p) for p in paths}
    for i, p in enumerate(paths[1:], 1):
        parent = paths[(i - 1) // branching]
        pages[parent].links.append(p)
    for p in paths:
        for _ in range(2):
            pages[p].links.append(rng.choice(paths))
        pages[p].requisites = ["/static/site.css", f"/static/img{paths.index(p):03d}.png"]
    for p in rng.sample(paths, min(script_pages, len(paths))):
        pages[p].script = True
        pages[p].requisites.append("/static/app.js")
    for j in range(private_pages):
        path = f"/private/secret{j}.html"
        pages[path] = SimPage(path, links=["/"], requisites=["/static/site.css"])
        pages["/"].links.append(path)
    pages["/"].links.extend(external_links)
    return SimSite(name, pages, list(eras), robots)


class _SiteHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.0"
    server_version = "SimOnion/1.0"

    def log_message(self, format, *args):
        pass

    def do_GET(self):
        site: SimSite = self.server.app
        path = self.path.split("?", 1)[0]
        status, headers, body = site.render(path)
        self.send_response(status)
        for k, v in headers:
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class SiteServer(BackgroundServer):
    """Serves one SimSite on a loopback port (all eras share the listener)."""

    def __init__(self, site: SimSite):
        super().__init__(_SiteHandler)
        self.site = site
        self.httpd.app = site
