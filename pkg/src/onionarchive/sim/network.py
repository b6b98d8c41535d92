"""Stub SOCKS5 proxy routing onion names to local site servers by era."""
from __future__ import annotations

import select
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from ..core import Timestamp14
from .sites import SimSite, SiteServer

REPLY_OK = 0
REPLY_HOST_UNREACHABLE = 4
REPLY_REFUSED = 5
REPLY_COMMAND = 7
REPLY_ATYP = 8


class PortExhausted(OSError):
    pass


@dataclass
class AuditEntry:
    at: str  # virtual time of the request
    atyp: int
    host: str
    port: int
    reply: int
    site: Optional[str] = None
    era: Optional[int] = None

    def to_json(self) -> dict:
        return dict(self.__dict__)


class NameTable:
    """Maps an onion name to a listener, honouring the era in force at ``clock``."""

    def __init__(self, sites: Sequence[SimSite], servers: Dict[str, SiteServer], clock):
        self.sites = list(sites)
        self.servers = servers
        self.clock = clock
        self._names: Dict[str, Tuple[SimSite, int]] = {}
        for site in self.sites:
            for idx, (onion, _) in enumerate(site.eras):
                if onion in self._names:
                    raise ValueError(f"onion {onion} is used by two sites")
                self._names[onion] = (site, idx)

    def route(self, host: str) -> Tuple[int, Optional[Tuple[str, int]], Optional[str], Optional[int]]:
        """(reply code, listener address, site name, era index)."""
        name = host.lower().rstrip(".")
        labels = name.split(".")
        key = ".".join(labels[-2:]) if len(labels) >= 2 else name
        hit = self._names.get(key)
        if hit is None:
            return REPLY_HOST_UNREACHABLE, None, None, None
        site, idx = hit
        current = site.era_at(self.clock.timestamp())
        if current is None or idx > current:
            # not yet published
            return REPLY_HOST_UNREACHABLE, None, site.name, idx
        if idx < current:
            return REPLY_REFUSED, None, site.name, idx
        return REPLY_OK, self.servers[site.name].address, site.name, idx


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("client went away")
        buf += chunk
    return bytes(buf)


def _reply(sock: socket.socket, code: int, bound: Tuple[str, int] = ("0.0.0.0", 0)):
    sock.sendall(struct.pack("!BBBB", 5, code, 0, 1) + socket.inet_aton(bound[0]) + struct.pack("!H", bound[1]))


class _SocksHandler(socketserver.BaseRequestHandler):
    def handle(self):
        proxy: StubSocksProxy = self.server.proxy
        sock = self.request
        sock.settimeout(30)
        try:
            ver, nmethods = _recv_exact(sock, 2)
            methods = _recv_exact(sock, nmethods)
            if ver != 5 or 0 not in methods:
                sock.sendall(b"\x05\xff")
                return
            sock.sendall(b"\x05\x00")
            ver, cmd, _, atyp = _recv_exact(sock, 4)
            if atyp == 1:
                host = socket.inet_ntoa(_recv_exact(sock, 4))
            elif atyp == 3:
                host = _recv_exact(sock, _recv_exact(sock, 1)[0]).decode("ascii", "replace")
            elif atyp == 4:
                host = socket.inet_ntop(socket.AF_INET6, _recv_exact(sock, 16))
            else:
                host = ""
            (port,) = struct.unpack("!H", _recv_exact(sock, 2))
        except (ConnectionError, OSError, ValueError):
            return
        at = proxy.clock.timestamp()
        if cmd != 1:
            proxy.record(AuditEntry(at, atyp, host, port, REPLY_COMMAND))
            _reply(sock, REPLY_COMMAND)
            return
        if atyp != 3:
            proxy.record(AuditEntry(at, atyp, host, port, REPLY_ATYP))
            _reply(sock, REPLY_ATYP)
            return
        code, target, site, era = proxy.names.route(host)
        proxy.record(AuditEntry(at, atyp, host, port, code, site, era))
        if code != REPLY_OK:
            _reply(sock, code)
            return
        try:
            upstream = socket.create_connection(target, timeout=10)
        except OSError:
            _reply(sock, 1)
            return
        with upstream:
            _reply(sock, REPLY_OK, upstream.getsockname()[:2])
            _relay(sock, upstream)


def _relay(a: socket.socket, b: socket.socket):
    a.settimeout(None)
    b.settimeout(None)
    peers = {a: b, b: a}
    open_ = {a, b}
    while open_:
        readable, _, _ = select.select(list(open_), [], [], 30)
        if not readable:
            return
        for s in readable:
            try:
                data = s.recv(65536)
            except OSError:
                data = b""
            if not data:
                open_.discard(s)
                try:
                    peers[s].shutdown(socket.SHUT_WR)
                except OSError:
                    pass
                continue
            peers[s].sendall(data)


class _ThreadingTCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class StubSocksProxy:
    """SOCKS5 CONNECT-by-hostname only; everything else is refused and audited."""

    def __init__(self, names: NameTable, clock, host: str = "127.0.0.1", port: int = 0):
        self.names = names
        self.clock = clock
        try:
            self.server = _ThreadingTCPServer((host, port), _SocksHandler)
        except OSError as exc:
            raise PortExhausted(f"cannot bind SOCKS proxy: {exc}") from exc
        self.server.proxy = self
        self.audit: List[AuditEntry] = []
        self._lock = threading.Lock()
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> Tuple[str, int]:
        return self.server.server_address[:2]

    def record(self, entry: AuditEntry):
        with self._lock:
            self.audit.append(entry)

    def start(self) -> "StubSocksProxy":
        self._thread = threading.Thread(target=self.server.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()
        return self

    def close(self):
        self.server.shutdown()
        self.server.server_close()
        if self._thread is not None:
            self._thread.join()


class NetworkHandle:
    """Running site servers plus the proxy in front of them."""

    def __init__(self, sites: Sequence[SimSite], clock):
        self.sites = {s.name: s for s in sites}
        self.servers: Dict[str, SiteServer] = {}
        try:
            for site in sites:
                self.servers[site.name] = SiteServer(site).start()
        except OSError as exc:
            self.close()
            raise PortExhausted(f"cannot bind site server: {exc}") from exc
        self.names = NameTable(sites, self.servers, clock)
        self.proxy = StubSocksProxy(self.names, clock).start()

    @property
    def proxy_address(self) -> Tuple[str, int]:
        return self.proxy.address

    @property
    def audit(self) -> List[AuditEntry]:
        return list(self.proxy.audit)

    def local_resolutions(self) -> int:
        """Requests that reached the proxy with a pre-resolved address."""
        return sum(1 for a in self.proxy.audit if a.atyp != 3)

    def onion_at(self, site: str, ts) -> Optional[str]:
        return self.sites[site].onion_at(Timestamp14(ts))

    def close(self):
        if getattr(self, "proxy", None) is not None:
            self.proxy.close()
        for server in self.servers.values():
            server.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def start_network(scenario) -> NetworkHandle:
    """Start one server per site and a stub SOCKS5 proxy driven by ``scenario.clock``."""
    return NetworkHandle(scenario.sites, scenario.clock)
