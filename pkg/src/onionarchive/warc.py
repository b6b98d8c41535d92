"""WARC/1.1 writing and reading, plus a CDX-style lookup index.

Every capture produces a ``request`` and a ``response`` record; when the
crawler knows the site's first-observed onion URI the response record
carries a ``WARC-X-First-Observed-URI`` header and a ``metadata`` record
restates it together with the current URI and the canonicalizer site id.

Records may be written plain or as one gzip member per record.
"""
from __future__ import annotations

import base64
import bisect
import hashlib
import logging
import re
import threading
import uuid
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .core import Timestamp14, canonicalize_uri

log = logging.getLogger(__name__)

WARC_VERSION = b"WARC/1.1"
FIRST_OBSERVED_HEADER = "WARC-X-First-Observed-URI"
DEFAULT_MAX_FILE_BYTES = 1 << 30
CRLF = b"\r\n"

Headers = List[Tuple[str, str]]


class WarcError(Exception):
    pass


class MalformedRecord(WarcError):
    def __init__(self, offset: int, detail: str):
        super().__init__(f"malformed WARC record at offset {offset}: {detail}")
        self.offset = offset
        self.detail = detail


class DigestMismatch(WarcError):
    def __init__(self, offset: int, which: str):
        super().__init__(f"{which} mismatch in record at offset {offset}")
        self.offset = offset


class IoFailure(WarcError):
    pass


class OversizePayload(WarcError):
    pass


class NotCaptured(WarcError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "not captured"


def sha1_base32(data: bytes) -> str:
    return "sha1:" + base64.b32encode(hashlib.sha1(data).digest()).decode("ascii")


def header_value(headers: Headers, name: str) -> Optional[str]:
    lname = name.lower()
    for k, v in headers:
        if k.lower() == lname:
            return v
    return None


# -- HTTP message helpers ---------------------------------------------------


def parse_http_head(head: bytes) -> Tuple[str, Headers]:
    """Split an HTTP message head into its start line and header list."""
    lines = head.split(b"\r\n")
    start = lines[0].decode("latin-1")
    headers = []
    for line in lines[1:]:
        if not line:
            continue
        if line[:1] in (b" ", b"\t") and headers:
            k, v = headers[-1]
            headers[-1] = (k, v + " " + line.strip().decode("latin-1"))
            continue
        name, sep, value = line.partition(b":")
        if not sep:
            continue
        headers.append((name.decode("latin-1").strip(), value.decode("latin-1").strip()))
    return start, headers


def dechunk(raw: bytes) -> bytes:
    """Decode a chunked transfer-coded body; tolerant of a missing trailer."""
    out = bytearray()
    pos = 0
    while True:
        eol = raw.find(b"\r\n", pos)
        if eol < 0:
            raise ValueError("truncated chunk size line")
        size_text = raw[pos:eol].split(b";", 1)[0].strip()
        size = int(size_text, 16)
        pos = eol + 2
        if size == 0:
            return bytes(out)
        if pos + size > len(raw):
            raise ValueError("truncated chunk")
        out += raw[pos:pos + size]
        pos += size + 2


def http_payload(block: bytes) -> Tuple[int, Headers, bytes]:
    """(status, headers, entity body) of a stored HTTP response block."""
    head, sep, body = block.partition(b"\r\n\r\n")
    if not sep:
        raise ValueError("HTTP response block has no header terminator")
    start, headers = parse_http_head(head)
    parts = start.split(" ", 2)
    if len(parts) < 2 or not parts[0].startswith("HTTP/"):
        raise ValueError(f"bad status line {start!r}")
    status = int(parts[1])
    te = (header_value(headers, "Transfer-Encoding") or "").lower()
    if "chunked" in te:
        body = dechunk(body)
    return status, headers, body


# -- records ----------------------------------------------------------------


@dataclass
class CaptureRecord:
    kind: str
    target_uri: Optional[str]
    capture_time: Timestamp14
    headers: Headers
    block: bytes
    payload: bytes
    payload_digest: str
    offset: int = 0
    length: int = 0
    warc_file: Optional[str] = None
    http_status: Optional[int] = None
    http_headers: Headers = field(default_factory=list)

    def header(self, name: str) -> Optional[str]:
        return header_value(self.headers, name)

    @property
    def record_id(self) -> Optional[str]:
        return self.header("WARC-Record-ID")

    @property
    def first_observed_uri(self) -> Optional[str]:
        return self.header(FIRST_OBSERVED_HEADER)

    @property
    def content_type(self) -> Optional[str]:
        return header_value(self.http_headers, "Content-Type")


def build_record(
    warc_type: str,
    date: Timestamp14,
    block: bytes,
    content_type: Optional[str],
    target_uri: Optional[str] = None,
    extra: Sequence[Tuple[str, str]] = (),
    payload: Optional[bytes] = None,
    record_id: Optional[str] = None,
) -> Tuple[str, bytes]:
    """Serialize one WARC record; returns ``(record_id, bytes)``."""
    record_id = record_id or f"<urn:uuid:{uuid.uuid4()}>"
    headers: Headers = [
        ("WARC-Type", warc_type),
        ("WARC-Record-ID", record_id),
        ("WARC-Date", date.iso()),
    ]
    if target_uri is not None:
        headers.append(("WARC-Target-URI", target_uri))
    headers.extend(extra)
    if payload is not None:
        headers.append(("WARC-Payload-Digest", sha1_base32(payload)))
    headers.append(("WARC-Block-Digest", sha1_base32(block)))
    if content_type:
        headers.append(("Content-Type", content_type))
    headers.append(("Content-Length", str(len(block))))
    for name, value in headers:
        if "\r" in value or "\n" in value:
            raise WarcError(f"header {name} contains a line break")
    head = WARC_VERSION + CRLF + b"".join(f"{k}: {v}".encode("utf-8") + CRLF for k, v in headers)
    return record_id, head + CRLF + block + CRLF + CRLF


def _gzip_member(data: bytes) -> bytes:
    comp = zlib.compressobj(6, zlib.DEFLATED, 31)
    return comp.compress(data) + comp.flush()


class WarcWriter:
    """Appends records to one WARC file. Not thread-safe on its own."""

    def __init__(self, path, gzip: bool = False, warcinfo: Optional[Dict[str, str]] = None,
                 date: Optional[Timestamp14] = None):
        self.path = Path(path)
        self.gzip = gzip
        self.records_written = 0
        try:
            self._fh: BinaryIO = open(self.path, "ab")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        if self._fh.tell() == 0:
            fields = {"software": "onionarchive", "format": "WARC File Format 1.1"}
            fields.update(warcinfo or {})
            block = b"".join(f"{k}: {v}".encode("utf-8") + CRLF for k, v in fields.items())
            _, rec = build_record("warcinfo", date or Timestamp14.now(), block, "application/warc-fields",
                                  extra=[("WARC-Filename", self.path.name)])
            self.write_raw(rec)

    @property
    def size(self) -> int:
        return self._fh.tell()

    def write_raw(self, record: bytes) -> Tuple[int, int]:
        data = _gzip_member(record) if self.gzip else record
        try:
            offset = self._fh.tell()
            self._fh.write(data)
            self._fh.flush()
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        self.records_written += 1
        return offset, len(data)

    def close(self):
        self._fh.close()


@dataclass(frozen=True)
class CdxEntry:
    key: str
    timestamp: Timestamp14
    original: str
    digest: str
    status: int
    length: int
    offset: int
    filename: str

    @property
    def sort_key(self):
        return (self.key, self.timestamp)

    def to_line(self) -> str:
        return " ".join(
            [self.key, self.timestamp, self.original, self.digest, str(self.status),
             str(self.length), str(self.offset), self.filename]
        )

    @classmethod
    def from_line(cls, line: str) -> "CdxEntry":
        key, ts, original, digest, status, length, offset, filename = line.rstrip("\r\n").split(" ", 7)
        return cls(key, Timestamp14(ts), original, digest, int(status), int(length), int(offset), filename)


def surt_key(uri) -> str:
    """Host-reversed sort key, e.g. ``http://(onion,abc,www,)/path?q``.

    The scheme is kept so http and https captures stay distinct.
    """
    uri = canonicalize_uri(uri)
    labels = uri.host.split(".")
    host = ",".join(reversed(labels)) + ","
    if uri.port is not None:
        host += f":{uri.port}"
    return f"{uri.scheme}://({host}){uri.request_target()}"


class WarcStore:
    """Writes captures for one crawl job, one WARC file series per target host."""

    def __init__(self, directory, job_id: str = "crawl", gzip: bool = False,
                 max_file_bytes: int = DEFAULT_MAX_FILE_BYTES, max_payload_bytes: int = DEFAULT_MAX_FILE_BYTES):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.job_id = job_id
        self.gzip = gzip
        self.max_file_bytes = max_file_bytes
        self.max_payload_bytes = max_payload_bytes
        self._writers: Dict[str, WarcWriter] = {}
        self._serial: Dict[str, int] = {}
        self._locks: Dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self.files: List[Path] = []

    def _filename(self, host: str, serial: int) -> Path:
        safe = re.sub(r"[^a-z0-9.-]", "_", host.lower())
        ext = ".warc.gz" if self.gzip else ".warc"
        return self.directory / f"{self.job_id}-{safe}-{serial:05d}{ext}"

    def _writer(self, host: str, date: Timestamp14) -> WarcWriter:
        writer = self._writers.get(host)
        if writer is None or writer.size >= self.max_file_bytes:
            if writer is not None:
                writer.close()
            serial = self._serial.get(host, 0)
            path = self._filename(host, serial)
            while path.exists():
                serial += 1
                path = self._filename(host, serial)
            self._serial[host] = serial + 1
            writer = WarcWriter(path, self.gzip, {"job": self.job_id, "host": host}, date)
            self._writers[host] = writer
            self.files.append(path)
        return writer

    def write_capture(self, fetch, first_observed_uri=None, site_id: Optional[str] = None,
                      current_uri=None) -> List[CdxEntry]:
        """Write request + response (+ metadata) records for one fetch.

        Returns the CDX entry of the response record.
        """
        if len(fetch.body) > self.max_payload_bytes:
            raise OversizePayload(f"{fetch.uri}: {len(fetch.body)} bytes")
        target = str(fetch.uri)
        date = fetch.fetch_started_at
        with self._guard:
            lock = self._locks.setdefault(fetch.uri.host, threading.Lock())
        with lock:
            writer = self._writer(fetch.uri.host, date)
            resp_extra = []
            if first_observed_uri is not None:
                resp_extra.append((FIRST_OBSERVED_HEADER, str(first_observed_uri)))
            resp_block = fetch.response_head + fetch.raw_body
            resp_id, resp = build_record(
                "response", date, resp_block, "application/http;msgtype=response",
                target_uri=target, extra=resp_extra, payload=fetch.raw_body,
            )
            _, req = build_record(
                "request", date, fetch.request_bytes, "application/http;msgtype=request",
                target_uri=target, extra=[("WARC-Concurrent-To", resp_id)],
            )
            writer.write_raw(req)
            offset, length = writer.write_raw(resp)
            if first_observed_uri is not None:
                fields = [
                    ("first-observed-uri", str(first_observed_uri)),
                    ("current-uri", str(current_uri or fetch.uri.root())),
                    ("site-id", site_id or "unknown"),
                ]
                block = b"".join(f"{k}: {v}".encode("utf-8") + CRLF for k, v in fields)
                _, meta = build_record(
                    "metadata", date, block, "application/warc-fields",
                    target_uri=target, extra=[("WARC-Refers-To", resp_id), ("WARC-Concurrent-To", resp_id)],
                )
                writer.write_raw(meta)
        entry = CdxEntry(
            surt_key(fetch.uri), date, target, sha1_base32(fetch.body)[5:],
            fetch.response_status, length, offset, str(writer.path),
        )
        return [entry]

    def close(self):
        for writer in self._writers.values():
            writer.close()
        self._writers.clear()


# -- reading ----------------------------------------------------------------


def _is_gzip(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(2) == b"\x1f\x8b"


def _parse_record(data: bytes, offset: int, verify: bool, warc_file: Optional[str]) -> Tuple[CaptureRecord, int]:
    """Parse one record from the start of ``data``; returns it and bytes consumed."""
    head_end = data.find(b"\r\n\r\n")
    if head_end < 0:
        raise MalformedRecord(offset, "truncated header block")
    lines = data[:head_end].split(b"\r\n")
    if not lines[0].startswith(b"WARC/"):
        raise MalformedRecord(offset, f"bad version line {lines[0][:40]!r}")
    headers: Headers = []
    for line in lines[1:]:
        name, sep, value = line.partition(b":")
        if not sep:
            raise MalformedRecord(offset, f"bad header line {line[:60]!r}")
        headers.append((name.decode("utf-8").strip(), value.decode("utf-8").strip()))
    for required in ("WARC-Record-ID", "WARC-Date", "WARC-Type", "Content-Length"):
        if header_value(headers, required) is None:
            raise MalformedRecord(offset, f"missing {required}")
    try:
        clen = int(header_value(headers, "Content-Length"))
    except ValueError:
        raise MalformedRecord(offset, "bad Content-Length") from None
    start = head_end + 4
    end = start + clen
    if len(data) < end + 4:
        raise MalformedRecord(offset, f"truncated: need {end + 4} bytes, have {len(data)}")
    if data[end:end + 4] != b"\r\n\r\n":
        raise MalformedRecord(offset, "record not terminated by CRLF CRLF")
    block = data[start:end]
    kind = header_value(headers, "WARC-Type")
    try:
        date = Timestamp14.from_iso(header_value(headers, "WARC-Date"))
    except ValueError:
        raise MalformedRecord(offset, "bad WARC-Date") from None

    payload = block
    transferred = block
    status = None
    http_headers: Headers = []
    ctype = (header_value(headers, "Content-Type") or "").replace(" ", "").lower()
    if kind in ("response", "request") and ctype.startswith("application/http"):
        _, _, transferred = block.partition(b"\r\n\r\n")
        payload = transferred
        if kind == "response":
            try:
                status, http_headers, payload = http_payload(block)
            except ValueError as exc:
                raise MalformedRecord(offset, f"bad HTTP block: {exc}") from None
    if verify:
        bd = header_value(headers, "WARC-Block-Digest")
        if bd is not None and bd.startswith("sha1:") and bd != sha1_base32(block):
            raise DigestMismatch(offset, "WARC-Block-Digest")
        pd = header_value(headers, "WARC-Payload-Digest")
        # payload digest covers the entity as transferred (chunk framing included)
        if pd is not None and pd.startswith("sha1:") and pd != sha1_base32(transferred):
            raise DigestMismatch(offset, "WARC-Payload-Digest")
    record = CaptureRecord(
        kind=kind,
        target_uri=header_value(headers, "WARC-Target-URI"),
        capture_time=date,
        headers=headers,
        block=block,
        payload=payload,
        payload_digest=sha1_base32(payload),
        offset=offset,
        warc_file=warc_file,
        http_status=status,
        http_headers=http_headers,
    )
    return record, end + 4


def _gzip_members(fh: BinaryIO) -> Iterator[Tuple[int, int, bytes]]:
    """Yield ``(offset, compressed_length, decompressed)`` per gzip member."""
    offset = 0
    pending = b""
    while True:
        if not pending:
            pending = fh.read(65536)
            if not pending:
                return
        d = zlib.decompressobj(31)
        out = []
        consumed = 0
        while not d.eof:
            chunk = pending or fh.read(65536)
            pending = b""
            if not chunk:
                raise MalformedRecord(offset, "truncated gzip member")
            try:
                out.append(d.decompress(chunk))
            except zlib.error as exc:
                raise MalformedRecord(offset, f"bad gzip data: {exc}") from None
            consumed += len(chunk)
        pending = d.unused_data
        length = consumed - len(pending)
        yield offset, length, b"".join(out)
        offset += length


def read_records(warc_file, verify: bool = True) -> Iterator[CaptureRecord]:
    """Yield every record of a WARC file, checking framing and digests."""
    path = str(warc_file)
    if _is_gzip(path):
        with open(path, "rb") as fh:
            for offset, length, data in _gzip_members(fh):
                record, used = _parse_record(data, offset, verify, path)
                if used != len(data):
                    raise MalformedRecord(offset, "gzip member holds more than one record")
                record.length = length
                yield record
        return
    with open(path, "rb") as fh:
        offset = 0
        while True:
            line = fh.readline()
            if not line:
                return
            head = bytearray(line)
            while not head.endswith(b"\r\n\r\n"):
                line = fh.readline()
                if not line:
                    raise MalformedRecord(offset, "truncated header block")
                head += line
            _, headers = parse_http_head(bytes(head[:-4]))
            try:
                clen = int(header_value(headers, "Content-Length") or "")
            except ValueError:
                raise MalformedRecord(offset, "missing or bad Content-Length") from None
            rest = fh.read(clen + 4)
            data = bytes(head) + rest
            record, used = _parse_record(data, offset, verify, path)
            record.length = used
            yield record
            offset += used


def read_record_at(warc_file, offset: int, length: int, verify: bool = True) -> CaptureRecord:
    with open(warc_file, "rb") as fh:
        fh.seek(offset)
        data = fh.read(length)
    if data[:2] == b"\x1f\x8b":
        try:
            d = zlib.decompressobj(31)
            raw = d.decompress(data)
        except zlib.error as exc:
            raise MalformedRecord(offset, f"bad gzip data: {exc}") from None
        if not d.eof:
            raise MalformedRecord(offset, "truncated gzip member")
        data = raw
    record, used = _parse_record(data, offset, verify, str(warc_file))
    record.length = length
    return record


# -- index ------------------------------------------------------------------


class CdxIndex:
    """Sorted CDX entries with nearest-in-time lookup."""

    HEADER = " CDX N b a k s S V g"

    def __init__(self, entries: Iterable[CdxEntry] = ()):
        self.entries: List[CdxEntry] = sorted(entries, key=lambda e: e.sort_key)
        self._keys = [e.sort_key for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def captures(self, uri) -> List[CdxEntry]:
        key = surt_key(uri)
        lo = bisect.bisect_left(self._keys, (key, ""))
        hi = bisect.bisect_right(self._keys, (key, "~"))
        return self.entries[lo:hi]

    def lookup(self, uri, at) -> CdxEntry:
        """Capture of ``uri`` nearest to ``at``; ties go to the earlier one."""
        at = Timestamp14(at)
        key = surt_key(uri)
        lo = bisect.bisect_left(self._keys, (key, ""))
        hi = bisect.bisect_right(self._keys, (key, "~"))
        if lo == hi:
            raise NotCaptured(str(uri))
        i = bisect.bisect_left(self._keys, (key, at), lo, hi)
        candidates = [self.entries[j] for j in (i - 1, i) if lo <= j < hi]
        at_dt = at.to_datetime()
        return min(candidates, key=lambda e: (abs((e.timestamp.to_datetime() - at_dt).total_seconds()), e.timestamp))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.HEADER + "\n")
            for e in self.entries:
                fh.write(e.to_line() + "\n")

    @classmethod
    def load(cls, path) -> "CdxIndex":
        with open(path, encoding="utf-8") as fh:
            return cls(CdxEntry.from_line(line) for line in fh if line.strip() and not line.startswith(" CDX"))


def build_index(warc_files: Iterable) -> CdxIndex:
    """Index the response records of the given WARC files."""
    entries = []
    for path in warc_files:
        for rec in read_records(path):
            if rec.kind != "response" or rec.target_uri is None:
                continue
            try:
                uri = canonicalize_uri(rec.target_uri)
            except ValueError:
                log.warning("skipping record with unusable target %r", rec.target_uri)
                continue
            entries.append(CdxEntry(
                surt_key(uri), rec.capture_time, rec.target_uri, rec.payload_digest[5:],
                rec.http_status or 0, rec.length, rec.offset, str(path),
            ))
    return CdxIndex(entries)


def lookup_capture(index: CdxIndex, uri, at) -> CdxEntry:
    return index.lookup(uri, at)


def warc_files_in(directory) -> List[Path]:
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.name.endswith((".warc", ".warc.gz")))
