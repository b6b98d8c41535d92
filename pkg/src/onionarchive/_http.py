"""Small helpers shared by the JSON/HTTP services (stdlib http.server)."""
from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, urlsplit

log = logging.getLogger(__name__)


class HttpError(Exception):
    def __init__(self, status: int, error: str, detail: Optional[str] = None, **extra):
        super().__init__(error)
        self.status = status
        self.error = error
        self.detail = detail
        self.extra = extra

    def body(self) -> dict:
        body = {"error": self.error}
        if self.detail:
            body["detail"] = self.detail
        body.update(self.extra)
        return body


class JsonHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "onionarchive"

    def log_message(self, format, *args):
        log.debug("%s %s", self.address_string(), format % args)

    def send_body(self, status: int, body: bytes, content_type: str, headers=()):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for name, value in headers:
            self.send_header(name, value)
        # unread request bodies would desync a kept-alive connection
        self.send_header("Connection", "close")
        self.close_connection = True
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def send_json(self, status: int, obj, headers=()):
        body = json.dumps(obj, ensure_ascii=False, sort_keys=True).encode("utf-8")
        self.send_body(status, body, "application/json; charset=utf-8", headers)

    def read_json(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        try:
            data = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise HttpError(400, "malformed", f"request body is not JSON: {exc}")
        if not isinstance(data, dict):
            raise HttpError(400, "malformed", "request body must be a JSON object")
        return data

    def split(self):
        parts = urlsplit(self.path)
        query = {k: v[-1] for k, v in parse_qs(parts.query, keep_blank_values=True).items()}
        return parts.path, query


class BackgroundServer:
    """A ThreadingHTTPServer running on a daemon thread."""

    def __init__(self, handler_cls, host: str = "127.0.0.1", port: int = 0):
        self.httpd = ThreadingHTTPServer((host, port), handler_cls)
        self.httpd.daemon_threads = True
        self.httpd.app = None
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self):
        return self.httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()
        return self

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
