"""Minimal SOCKS5 (RFC 1928) CONNECT client using hostname addressing.

The destination name is sent to the proxy as ATYP 0x03 and never resolved
locally, which is what makes ``.onion`` names reachable through Tor.
"""
from __future__ import annotations

import socket
import struct
from typing import Optional, Tuple

SOCKS_VERSION = 5
ATYP_IPV4 = 1
ATYP_DOMAIN = 3
ATYP_IPV6 = 4

REPLY_MESSAGES = {
    1: "general SOCKS server failure",
    2: "connection not allowed by ruleset",
    3: "network unreachable",
    4: "host unreachable",
    5: "connection refused",
    6: "TTL expired",
    7: "command not supported",
    8: "address type not supported",
}


class SocksError(ConnectionError):
    def __init__(self, message: str, reply: Optional[int] = None):
        super().__init__(message)
        self.reply = reply


class ProxyUnreachable(SocksError):
    pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise SocksError("proxy closed the connection during negotiation")
        buf += chunk
    return bytes(buf)


def socks5_connect(
    proxy: Tuple[str, int],
    host: str,
    port: int,
    timeout: Optional[float] = 30.0,
    username: Optional[str] = None,
    password: Optional[str] = None,
) -> socket.socket:
    """Open a TCP stream to ``host:port`` through a SOCKS5 proxy."""
    encoded = host.encode("idna") if not host.isascii() else host.encode("ascii")
    if len(encoded) > 255:
        raise SocksError(f"hostname too long for SOCKS5: {host!r}")
    try:
        # the proxy endpoint itself is an address, not an onion name
        sock = socket.create_connection(proxy, timeout=timeout)
    except OSError as exc:
        raise ProxyUnreachable(f"cannot reach SOCKS proxy {proxy[0]}:{proxy[1]}: {exc}") from exc
    try:
        methods = b"\x00\x02" if username is not None else b"\x00"
        sock.sendall(bytes([SOCKS_VERSION, len(methods)]) + methods)
        ver, method = _recv_exact(sock, 2)
        if ver != SOCKS_VERSION:
            raise SocksError(f"not a SOCKS5 proxy (version byte {ver})")
        if method == 0x02:
            user = (username or "").encode()
            pw = (password or "").encode()
            sock.sendall(bytes([1, len(user)]) + user + bytes([len(pw)]) + pw)
            _, status = _recv_exact(sock, 2)
            if status != 0:
                raise SocksError("SOCKS5 authentication rejected")
        elif method != 0x00:
            raise SocksError("proxy accepted no offered authentication method")

        sock.sendall(struct.pack("!BBBBB", SOCKS_VERSION, 1, 0, ATYP_DOMAIN, len(encoded)) + encoded + struct.pack("!H", port))
        ver, reply, _, atyp = _recv_exact(sock, 4)
        if ver != SOCKS_VERSION:
            raise SocksError("malformed SOCKS5 reply")
        if reply != 0:
            raise SocksError(f"{host}:{port}: {REPLY_MESSAGES.get(reply, 'error %d' % reply)}", reply)
        if atyp == ATYP_IPV4:
            _recv_exact(sock, 4)
        elif atyp == ATYP_IPV6:
            _recv_exact(sock, 16)
        elif atyp == ATYP_DOMAIN:
            _recv_exact(sock, _recv_exact(sock, 1)[0])
        else:
            raise SocksError(f"unknown address type {atyp} in reply")
        _recv_exact(sock, 2)
        return sock
    except BaseException:
        sock.close()
        raise
