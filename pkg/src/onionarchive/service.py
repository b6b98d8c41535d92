"""HTTP/JSON canonicalizer service backed by an append-only observation log.

The log is newline-delimited JSON, one entry per accepted write::

    {"seq": 1, "kind": "observe", "observation": {...}, "outcome": {...}}
    {"seq": 2, "kind": "resolve", "collision_id": "...", "decision": "new_site",
     "site_id": null, "outcome": {"site_id": "..."}}

On startup the log is replayed through a fresh engine and every recorded
outcome is checked against the recomputed one.
"""
from __future__ import annotations

import json
import logging
import os
import socket
import threading
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Tuple

from ._http import BackgroundServer, HttpError, JsonHandler
from .canonicalizer import (
    MERGE_INTO,
    NEW_SITE,
    AliasConflict,
    AlreadyResolved,
    CanonError,
    Canonicalizer,
    Observation,
    OutOfOrderObservation,
    SiteRecord,
    TimelineEntry,
    UnknownCollision,
    UnknownSite,
    UnknownUri,
    result_from_json,
)
from .core import CanonicalUri, Timestamp14, canonicalize_uri

log = logging.getLogger(__name__)

LOG_NAME = "observations.jsonl"


class CorruptLog(Exception):
    def __init__(self, sequence_no, reason: str):
        super().__init__(f"observation log corrupt at seq {sequence_no}: {reason}")
        self.sequence_no = sequence_no


class OutcomeMismatch(CorruptLog):
    pass


class BindFailure(OSError):
    pass


class CanonUnavailable(Exception):
    """The canonicalizer service could not be reached."""


@dataclass
class LogEntry:
    sequence_no: int
    kind: str
    outcome: dict
    observation: Optional[Observation] = None
    collision_id: Optional[str] = None
    decision: Optional[str] = None
    site_id: Optional[str] = None

    def to_json(self) -> dict:
        data = {"seq": self.sequence_no, "kind": self.kind, "outcome": self.outcome}
        if self.kind == "observe":
            data["observation"] = self.observation.to_json()
        else:
            data.update(collision_id=self.collision_id, decision=self.decision, site_id=self.site_id)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "LogEntry":
        kind = data["kind"]
        if kind == "observe":
            return cls(data["seq"], kind, data["outcome"], observation=Observation.from_json(data["observation"]))
        if kind == "resolve":
            return cls(
                data["seq"], kind, data["outcome"],
                collision_id=data["collision_id"], decision=data["decision"], site_id=data.get("site_id"),
            )
        raise ValueError(f"unknown log entry kind {kind!r}")


def apply_entry(engine: Canonicalizer, entry: LogEntry) -> dict:
    if entry.kind == "observe":
        return engine.register_observation(entry.observation).to_json()
    site = engine.resolve_collision(entry.collision_id, entry.decision, entry.site_id)
    return {"site_id": site}


def replay_log(entries: Iterable[LogEntry], engine: Optional[Canonicalizer] = None) -> Canonicalizer:
    """Rebuild engine state from log entries, auditing each recorded outcome."""
    engine = engine or Canonicalizer()
    expected_seq = 1
    for entry in entries:
        if entry.sequence_no != expected_seq:
            raise CorruptLog(entry.sequence_no, f"expected sequence number {expected_seq}")
        try:
            outcome = apply_entry(engine, entry)
        except (CanonError, ValueError) as exc:
            raise OutcomeMismatch(entry.sequence_no, f"entry no longer applies: {exc}") from None
        if _normalize(outcome) != _normalize(entry.outcome):
            raise OutcomeMismatch(entry.sequence_no, f"recorded {entry.outcome}, recomputed {outcome}")
        expected_seq += 1
    return engine


def _normalize(outcome: dict) -> dict:
    if "outcome" in outcome:
        return result_from_json(outcome)
    return {"site_id": outcome.get("site_id")}


class ObservationLog:
    """Append-only NDJSON log; each append is flushed and fsynced."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = None
        self._good_size = 0
        self.last_seq = 0

    def entries(self) -> Iterator[LogEntry]:
        self._good_size = 0
        if not self.path.exists():
            return
        with open(self.path, "rb") as fh:
            for lineno, raw in enumerate(fh, 1):
                if not raw.strip():
                    self._good_size += len(raw)
                    continue
                data = None
                try:
                    data = json.loads(raw.decode("utf-8"))
                    entry = LogEntry.from_json(data)
                except (ValueError, KeyError, TypeError) as exc:
                    if not raw.endswith(b"\n") and not fh.read(1):
                        # torn final append: never acknowledged, dropped on open()
                        log.warning("discarding incomplete last log line %d", lineno)
                        return
                    seq = data["seq"] if isinstance(data, dict) and "seq" in data else f"line {lineno}"
                    raise CorruptLog(seq, f"unreadable entry: {exc}") from None
                self._good_size += len(raw)
                yield entry

    def open(self, last_seq: int):
        self.last_seq = last_seq
        if self.path.exists() and self.path.stat().st_size > self._good_size:
            with open(self.path, "r+b") as fh:
                fh.truncate(self._good_size)
        self._fh = open(self.path, "ab")

    def append(self, entry: LogEntry):
        line = json.dumps(entry.to_json(), sort_keys=True, ensure_ascii=False) + "\n"
        self._fh.write(line.encode("utf-8"))
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self.last_seq = entry.sequence_no

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class CanonStore:
    """Engine plus durable log: the single writer behind the HTTP API."""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.log = ObservationLog(self.data_dir / LOG_NAME)
        entries = list(self.log.entries())
        self.engine = replay_log(entries)
        self.log.open(entries[-1].sequence_no if entries else 0)
        self._write_lock = threading.Lock()
        log.info("canonicalizer state rebuilt from %d log entries", len(entries))

    def observe(self, obs: Observation) -> dict:
        with self._write_lock:
            outcome = self.engine.register_observation(obs).to_json()
            self.log.append(LogEntry(self.log.last_seq + 1, "observe", outcome, observation=obs))
            return outcome

    def resolve(self, collision_id: str, decision: str, site_id: Optional[str] = None) -> str:
        with self._write_lock:
            site = self.engine.resolve_collision(collision_id, decision, site_id)
            self.log.append(
                LogEntry(
                    self.log.last_seq + 1, "resolve", {"site_id": site},
                    collision_id=collision_id, decision=decision, site_id=site_id,
                )
            )
            return site

    def close(self):
        self.log.close()


_ERROR_STATUS = {
    UnknownUri: 404,
    UnknownCollision: 404,
    UnknownSite: 404,
    OutOfOrderObservation: 409,
    AlreadyResolved: 409,
    AliasConflict: 409,
}


class CanonHandler(JsonHandler):
    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def _dispatch(self, method: str):
        store: CanonStore = self.server.app
        path, query = self.split()
        try:
            if method == "GET" and path == "/api/v1/current":
                site_id, cur = store.engine.current_uri(_uri_param(query))
                self.send_json(200, {"site_id": site_id, "current_uri": str(cur)})
            elif method == "GET" and path == "/api/v1/timeline":
                self.send_json(200, store.engine.site_for(_uri_param(query)).to_json())
            elif method == "GET" and path == "/api/v1/at":
                uri = _uri_param(query)
                try:
                    ts = Timestamp14(query.get("timestamp", ""))
                except ValueError as exc:
                    raise HttpError(400, "malformed", str(exc))
                site = store.engine.site_for(uri)
                self.send_json(200, {"site_id": site.site_id, "uri_at": str(store.engine.uri_at(uri, ts))})
            elif method == "GET" and path == "/api/v1/pending":
                self.send_json(200, {"pending": [c.to_json() for c in store.engine.list_pending()]})
            elif method == "POST" and path == "/api/v1/observe":
                body = self.read_json()
                try:
                    obs = Observation.from_json(body)
                except (KeyError, TypeError, ValueError) as exc:
                    raise HttpError(400, "malformed", f"bad observation: {exc}")
                self.send_json(200, store.observe(obs))
            elif method == "POST" and path.startswith("/api/v1/collisions/") and path.endswith("/resolve"):
                cid = urllib.parse.unquote(path[len("/api/v1/collisions/"):-len("/resolve")])
                body = self.read_json()
                decision = body.get("decision")
                if decision not in (MERGE_INTO, NEW_SITE) or (decision == MERGE_INTO and not body.get("site_id")):
                    raise HttpError(400, "malformed", "decision must be merge_into (with site_id) or new_site")
                site = store.resolve(cid, decision, body.get("site_id"))
                self.send_json(200, {"collision_id": cid, "site_id": site, "status": store.engine.collision(cid).status})
            else:
                raise HttpError(404, "not_found", path)
        except HttpError as exc:
            self.send_json(exc.status, exc.body())
        except CanonError as exc:
            self.send_json(_ERROR_STATUS.get(type(exc), 400), {"error": exc.code, "detail": str(exc)})


def _uri_param(query: dict) -> CanonicalUri:
    if "uri" not in query:
        raise HttpError(400, "malformed", "missing uri parameter")
    try:
        return canonicalize_uri(query["uri"])
    except ValueError as exc:
        raise HttpError(400, "malformed", str(exc))


class CanonService(BackgroundServer):
    def __init__(self, store: CanonStore, host: str = "127.0.0.1", port: int = 0):
        try:
            super().__init__(CanonHandler, host, port)
        except OSError as exc:
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
        self.store = store
        self.httpd.app = store

    def close(self):
        super().close()
        self.store.close()


def serve(data_dir, host: str = "127.0.0.1", port: int = 0) -> CanonService:
    """Rebuild state from ``data_dir`` and start serving on a background thread."""
    return CanonService(CanonStore(data_dir), host, port).start()


class CanonClient:
    """Client for the canonicalizer API with the same read surface as the engine.

    Network failures raise :class:`CanonUnavailable`; a 404 maps back to the
    engine's ``UnknownUri`` / ``UnknownCollision``.
    """

    def __init__(self, base_url: str, timeout: float = 5.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _request(self, method: str, path: str, params=None, body=None) -> dict:
        url = self.base_url + path
        if params:
            url += "?" + urllib.parse.urlencode(params)
        data = None
        headers = {"Accept": "application/json"}
        if body is not None:
            data = json.dumps(body).encode("utf-8")
            headers["Content-Type"] = "application/json"
        req = urllib.request.Request(url, data=data, method=method, headers=headers)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            try:
                payload = json.loads(exc.read().decode("utf-8"))
            except ValueError:
                payload = {"error": "http_%d" % exc.code}
            raise _client_error(exc.code, payload) from None
        except (urllib.error.URLError, socket.timeout, ConnectionError) as exc:
            raise CanonUnavailable(f"{self.base_url}: {exc}") from None

    def current_uri(self, uri) -> Tuple[str, CanonicalUri]:
        data = self._request("GET", "/api/v1/current", {"uri": str(uri)})
        return data["site_id"], canonicalize_uri(data["current_uri"])

    def site_for(self, uri) -> SiteRecord:
        data = self._request("GET", "/api/v1/timeline", {"uri": str(uri)})
        return SiteRecord(
            data["site_id"],
            frozenset((a["source"], a["alias"]) for a in data["aliases"]),
            tuple(
                TimelineEntry(canonicalize_uri(e["uri"]), Timestamp14(e["first_seen"]), Timestamp14(e["last_seen"]))
                for e in data["timeline"]
            ),
        )

    def timeline_for(self, uri):
        return self.site_for(uri).timeline

    def uri_at(self, uri, at) -> CanonicalUri:
        data = self._request("GET", "/api/v1/at", {"uri": str(uri), "timestamp": str(at)})
        return canonicalize_uri(data["uri_at"])

    def observe(self, obs: Observation) -> dict:
        return self._request("POST", "/api/v1/observe", body=obs.to_json())

    def pending(self) -> List[dict]:
        return self._request("GET", "/api/v1/pending")["pending"]

    def resolve(self, collision_id: str, decision: str, site_id: Optional[str] = None) -> dict:
        body = {"decision": decision}
        if site_id is not None:
            body["site_id"] = site_id
        path = "/api/v1/collisions/%s/resolve" % urllib.parse.quote(collision_id, safe="")
        return self._request("POST", path, body=body)


class CanonRequestError(CanonError):
    def __init__(self, status: int, payload: dict):
        super().__init__(payload.get("detail") or payload.get("error"))
        self.status = status
        self.code = payload.get("error", "error")
        self.payload = payload


def _client_error(status: int, payload: dict) -> Exception:
    code = payload.get("error")
    detail = payload.get("detail", code)
    for cls in (UnknownUri, UnknownCollision, UnknownSite, OutOfOrderObservation, AlreadyResolved, AliasConflict):
        if cls.code == code:
            return cls(detail)
    return CanonRequestError(status, payload)
