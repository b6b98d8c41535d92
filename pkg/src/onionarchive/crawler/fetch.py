"""Protocol-level capture engine: HTTP/1.1 GET over a SOCKS5 tunnel.

:class:`HttpFetchEngine` is one implementation of the small ``get`` surface
the crawler needs; a browser-driving engine could provide the same method.
"""
from __future__ import annotations

import socket
import ssl
import time
from dataclasses import dataclass
from typing import Optional, Protocol, Tuple

from ..core import CanonicalUri, Timestamp14, is_onion_host
from ..warc import Headers, dechunk, header_value, parse_http_head
from .socks import ProxyUnreachable, SocksError, socks5_connect

DEFAULT_USER_AGENT = "onionarchive/0.1 (+archival crawler)"


class FetchError(Exception):
    """A single fetch failed; the crawl carries on."""


class Timeout(FetchError):
    pass


class TooLarge(FetchError):
    pass


class RobotsDenied(FetchError):
    pass


class TooManyRedirects(FetchError):
    def __init__(self, message: str, results=()):
        super().__init__(message)
        self.results = list(results)


class ConnectFailed(FetchError):
    pass


class ProxyDown(FetchError):
    pass


@dataclass
class FetchResult:
    uri: CanonicalUri
    request_bytes: bytes
    request_headers: Headers
    response_status: int
    response_reason: str
    response_headers: Headers
    response_head: bytes  # status line + headers + blank line, as received
    raw_body: bytes  # as transferred (may still be chunk-framed)
    body: bytes  # entity body after transfer decoding
    fetch_started_at: Timestamp14
    via_proxy: bool = True

    @property
    def content_type(self) -> str:
        return header_value(self.response_headers, "Content-Type") or ""

    def header(self, name: str) -> Optional[str]:
        return header_value(self.response_headers, name)


class FetchEngine(Protocol):
    def get(self, uri: CanonicalUri, started_at: Timestamp14) -> FetchResult: ...


def build_request(uri: CanonicalUri, user_agent: str) -> Tuple[bytes, Headers]:
    headers = [
        ("Host", uri.authority),
        ("User-Agent", user_agent),
        ("Accept", "*/*"),
        ("Accept-Encoding", "identity"),
        ("Connection", "close"),
    ]
    lines = [f"GET {uri.request_target()} HTTP/1.1"] + [f"{k}: {v}" for k, v in headers]
    return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1"), headers


def _body_complete(status: int, headers: Headers, body: bytearray) -> Optional[bool]:
    """True once the body is complete per framing, None if only EOF can tell."""
    if status < 200 or status in (204, 304):
        return True
    te = (header_value(headers, "Transfer-Encoding") or "").lower()
    if "chunked" in te:
        if not body.endswith(b"\r\n"):
            return False
        try:
            dechunk(bytes(body))
            return True
        except ValueError:
            return False
    clen = header_value(headers, "Content-Length")
    if clen is not None and clen.strip().isdigit():
        return len(body) >= int(clen)
    return None


class HttpFetchEngine:
    """GET over SOCKS5 (or direct TCP for surface hosts when no proxy is set)."""

    def __init__(self, proxy: Optional[Tuple[str, int]], timeout: float = 30.0,
                 max_bytes: int = 20 * 1024 * 1024, user_agent: str = DEFAULT_USER_AGENT,
                 verify_tls: bool = False):
        self.proxy = proxy
        self.timeout = timeout
        self.max_bytes = max_bytes
        self.user_agent = user_agent
        self.verify_tls = verify_tls

    def _connect(self, uri: CanonicalUri, deadline: float) -> socket.socket:
        port = uri.port or (443 if uri.scheme == "https" else 80)
        remaining = max(deadline - time.monotonic(), 0.001)
        try:
            if self.proxy is not None:
                sock = socks5_connect(self.proxy, uri.host, port, timeout=remaining)
            elif is_onion_host(uri.host):
                raise ConnectFailed(f"{uri.host}: onion hosts require a SOCKS proxy")
            else:
                sock = socket.create_connection((uri.host, port), timeout=remaining)
        except ProxyUnreachable as exc:
            raise ProxyDown(str(exc)) from exc
        except socket.timeout:
            raise Timeout(f"{uri}: connect timed out") from None
        except (SocksError, OSError) as exc:
            raise ConnectFailed(f"{uri}: {exc}") from exc
        if uri.scheme == "https":
            ctx = ssl.create_default_context()
            if not self.verify_tls:
                # onion services authenticate by address; most use self-signed certs
                ctx.check_hostname = False
                ctx.verify_mode = ssl.CERT_NONE
            sock = ctx.wrap_socket(sock, server_hostname=uri.host)
        return sock

    def get(self, uri: CanonicalUri, started_at: Timestamp14) -> FetchResult:
        deadline = time.monotonic() + self.timeout
        request, req_headers = build_request(uri, self.user_agent)
        sock = self._connect(uri, deadline)
        try:
            sock.sendall(request)
            buf = bytearray()
            head = None
            status, reason, headers = 0, "", []
            while True:
                if head is not None:
                    done = _body_complete(status, headers, buf)
                    if done:
                        break
                sock.settimeout(max(deadline - time.monotonic(), 0.001))
                try:
                    chunk = sock.recv(65536)
                except socket.timeout:
                    raise Timeout(f"{uri}: read timed out") from None
                except OSError as exc:
                    raise ConnectFailed(f"{uri}: {exc}") from exc
                if time.monotonic() > deadline:
                    raise Timeout(f"{uri}: exceeded {self.timeout}s")
                if not chunk:
                    if head is None:
                        raise ConnectFailed(f"{uri}: connection closed before response head")
                    if _body_complete(status, headers, buf) is False:
                        raise ConnectFailed(f"{uri}: connection closed mid-body")
                    break
                buf += chunk
                if len(buf) > self.max_bytes:
                    raise TooLarge(f"{uri}: response exceeds {self.max_bytes} bytes")
                if head is None:
                    end = buf.find(b"\r\n\r\n")
                    if end >= 0:
                        head = bytes(buf[: end + 4])
                        del buf[: end + 4]
                        start, headers = parse_http_head(head[:-4])
                        parts = start.split(" ", 2)
                        if len(parts) < 2 or not parts[1].isdigit():
                            raise ConnectFailed(f"{uri}: bad status line {start!r}")
                        status = int(parts[1])
                        reason = parts[2] if len(parts) > 2 else ""
        finally:
            sock.close()

        raw = bytes(buf)
        te = (header_value(headers, "Transfer-Encoding") or "").lower()
        body = dechunk(raw) if "chunked" in te else raw
        clen = header_value(headers, "Content-Length")
        if "chunked" not in te and clen is not None and clen.strip().isdigit():
            body = raw = raw[: int(clen)]
        return FetchResult(
            uri=uri,
            request_bytes=request,
            request_headers=req_headers,
            response_status=status,
            response_reason=reason,
            response_headers=headers,
            response_head=head,
            raw_body=raw,
            body=body,
            fetch_started_at=started_at,
            via_proxy=self.proxy is not None,
        )
