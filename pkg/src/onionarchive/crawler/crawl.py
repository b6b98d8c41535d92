"""Frontier, scope, robots, politeness and the crawl loop."""
from __future__ import annotations

import json
import logging
import threading
import urllib.robotparser
from collections import deque
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Deque, Dict, List, Optional, Set, Tuple
from urllib.parse import urljoin

from ..canonicalizer import UnknownUri
from ..clock import SystemClock
from ..core import CanonicalUri, OnionAddress, Timestamp14, canonicalize_uri, with_onion
from ..service import CanonUnavailable
from ..warc import WarcError, WarcStore
from .fetch import (
    ConnectFailed,
    FetchEngine,
    FetchError,
    FetchResult,
    HttpFetchEngine,
    RobotsDenied,
    Timeout,
    TooManyRedirects,
)
from .links import EMBEDDED, NAVIGATION, extract_links, is_html

log = logging.getLogger(__name__)

REDIRECT_STATUSES = (301, 302, 303, 307, 308)
MAX_REDIRECTS = 5


class StoreFailure(Exception):
    pass


@dataclass
class ScopePolicy:
    allowed_hosts: Set[str]
    allow_embedded_cross_host: bool = False

    def __post_init__(self):
        self.allowed_hosts = {h.lower().rstrip(".") for h in self.allowed_hosts}

    def host_allowed(self, host: str) -> bool:
        host = host.lower()
        return any(host == h or host.endswith("." + h) for h in self.allowed_hosts)


def in_scope(uri: CanonicalUri, policy: ScopePolicy, role: str = NAVIGATION) -> bool:
    if policy.host_allowed(uri.host):
        return True
    return role == EMBEDDED and policy.allow_embedded_cross_host


@dataclass
class CrawlJob:
    seeds: List[CanonicalUri]
    scope: ScopePolicy
    proxy: Optional[Tuple[str, int]] = None
    delay_ms: int = 1000
    robots: str = "obey"
    max_depth: int = 2
    max_pages_per_host: int = 10000
    job_id: str = "crawl"
    output_dir: Optional[str] = None
    timeout_s: float = 30.0
    max_response_bytes: int = 20 * 1024 * 1024
    gzip: bool = False
    workers: int = 1
    user_agent: Optional[str] = None
    canon_url: Optional[str] = None

    def __post_init__(self):
        self.seeds = [canonicalize_uri(s) for s in self.seeds]
        if not self.seeds:
            raise ValueError("a crawl job needs at least one seed")
        if self.delay_ms < 0 or self.max_depth < 0:
            raise ValueError("delay and max_depth must be non-negative")
        if self.robots not in ("obey", "ignore"):
            raise ValueError("robots mode must be 'obey' or 'ignore'")
        for seed in self.seeds:
            if not self.scope.host_allowed(seed.host):
                raise ValueError(f"seed host {seed.host} is not in allowed_hosts")

    @classmethod
    def from_json(cls, data: dict) -> "CrawlJob":
        data = dict(data)
        seeds = data.pop("seeds")
        hosts = data.pop("allowed_hosts", None) or [canonicalize_uri(s).host for s in seeds]
        scope = ScopePolicy(set(hosts), bool(data.pop("allow_embedded_cross_host", False)))
        proxy = data.pop("proxy", None)
        if isinstance(proxy, str):
            host, _, port = proxy.rpartition(":")
            proxy = (host, int(port))
        elif proxy is not None:
            proxy = (proxy[0], int(proxy[1]))
        return cls(seeds=seeds, scope=scope, proxy=proxy, **data)


def load_job(path) -> CrawlJob:
    with open(path, encoding="utf-8") as fh:
        return CrawlJob.from_json(json.load(fh))


@dataclass
class FrontierEntry:
    uri: CanonicalUri
    depth: int
    discovered_via: Optional[CanonicalUri]
    enqueued_at: Timestamp14
    role: str = NAVIGATION
    rewritten_from: Optional[CanonicalUri] = None
    flags: Tuple[str, ...] = ()


class Politeness:
    """Per-host minimum gap between fetch starts, with a timing log."""

    def __init__(self, delay_s: float, clock):
        self.delay_s = delay_s
        self.clock = clock
        self._last: Dict[str, float] = {}
        self._locks: Dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self.log: List[Tuple[str, float, str]] = []

    def lock_for(self, host: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(host, threading.Lock())

    def start(self, host: str, what: str) -> float:
        """Wait until ``host`` may be contacted again; returns the start time.

        Callers hold ``lock_for(host)`` for the whole fetch.
        """
        last = self._last.get(host)
        if last is not None:
            gap = last + self.delay_s - self.clock.now()
            if gap > 0:
                self.clock.sleep(gap)
        started = self.clock.now()
        self._last[host] = started
        with self._guard:
            self.log.append((host, started, what))
        return started


class RobotsCache:
    """robots.txt fetched once per scheme+authority per crawl.

    Non-2xx answers, fetch failures and unparseable files mean allow-all.
    """

    def __init__(self, user_agent: str):
        self.user_agent = user_agent
        self._parsers: Dict[str, Optional[urllib.robotparser.RobotFileParser]] = {}

    def known(self, uri: CanonicalUri) -> bool:
        return f"{uri.scheme}://{uri.authority}" in self._parsers

    def store(self, uri: CanonicalUri, result: Optional[FetchResult]):
        parser = None
        if result is not None and 200 <= result.response_status < 300:
            try:
                parser = urllib.robotparser.RobotFileParser()
                parser.parse(result.body.decode("utf-8", errors="replace").splitlines())
            except Exception:
                parser = None
        self._parsers[f"{uri.scheme}://{uri.authority}"] = parser

    def allowed(self, uri: CanonicalUri) -> bool:
        parser = self._parsers.get(f"{uri.scheme}://{uri.authority}")
        if parser is None:
            return True
        return parser.can_fetch(self.user_agent, str(uri))


class Fetcher:
    """Applies robots and politeness around a fetch engine and follows redirects."""

    def __init__(self, job: CrawlJob, engine: Optional[FetchEngine] = None, clock=None):
        self.job = job
        self.clock = clock or SystemClock()
        ua = job.user_agent or "onionarchive"
        self.engine = engine or HttpFetchEngine(job.proxy, job.timeout_s, job.max_response_bytes,
                                                user_agent=job.user_agent or "onionarchive/0.1")
        self.politeness = Politeness(job.delay_ms / 1000.0, self.clock)
        self.robots = RobotsCache(ua.split("/")[0])

    def _get(self, uri: CanonicalUri, what: str) -> FetchResult:
        started = self.politeness.start(uri.host, what)
        ts = Timestamp14.from_datetime(_utc(started))
        return self.engine.get(uri, ts)

    def _check_robots(self, uri: CanonicalUri):
        if self.job.robots != "obey":
            return
        if not self.robots.known(uri):
            robots_uri = CanonicalUri(uri.scheme, uri.host, uri.port, "/robots.txt")
            try:
                result = self._get(robots_uri, "robots")
            except FetchError:
                result = None
            self.robots.store(uri, result)
        if not self.robots.allowed(uri):
            raise RobotsDenied(str(uri))

    def fetch(self, entry: FrontierEntry) -> List[FetchResult]:
        """Fetch one frontier entry; every redirect hop is its own result."""
        results: List[FetchResult] = []
        uri = entry.uri
        with self.politeness.lock_for(uri.host):
            while True:
                self._check_robots(uri)
                result = self._get(uri, str(uri))
                results.append(result)
                if result.response_status not in REDIRECT_STATUSES:
                    return results
                location = result.header("Location")
                if not location:
                    return results
                try:
                    target = canonicalize_uri(urljoin(str(uri), location))
                except ValueError:
                    return results
                if target.host != uri.host or str(target) == str(uri):
                    return results
                if len(results) > MAX_REDIRECTS:
                    raise TooManyRedirects(f"{entry.uri}: more than {MAX_REDIRECTS} redirects", results)
                uri = target


def _utc(seconds: float) -> datetime:
    return datetime.fromtimestamp(seconds, timezone.utc)


def next_target(frontier: Deque[FrontierEntry], canon) -> FrontierEntry:
    """Pop the next entry and move it to the site's current onion if it shifted.

    With no canonicalizer, an unreachable one, or an unknown host the entry is
    returned unchanged with a flag.
    """
    entry = frontier.popleft()
    onion = entry.uri.onion
    if onion is None:
        return entry
    if canon is None:
        return replace(entry, flags=entry.flags + ("canon_unavailable",))
    try:
        _, current = canon.current_uri(entry.uri.root())
    except CanonUnavailable:
        return replace(entry, flags=entry.flags + ("canon_unavailable",))
    except UnknownUri:
        return replace(entry, flags=entry.flags + ("canon_unknown",))
    if current.onion == onion:
        return entry
    return replace(entry, uri=with_onion(entry.uri, current.onion), rewritten_from=entry.uri,
                   flags=entry.flags + ("shifted",))


@dataclass
class Capture:
    uri: str
    timestamp: str
    status: int
    first_observed_uri: Optional[str]
    cdx: list

    def to_json(self) -> dict:
        return {"uri": self.uri, "timestamp": self.timestamp, "status": self.status,
                "first_observed_uri": self.first_observed_uri}


@dataclass
class CrawlReport:
    fetched: int = 0
    captured: int = 0
    skipped_scope: int = 0
    robots_denied: int = 0
    shifted_targets: int = 0
    errors: int = 0
    skipped_limit: int = 0
    retried: int = 0
    captures: List[Capture] = field(default_factory=list)
    rewrites: List[Tuple[str, str]] = field(default_factory=list)
    flagged: List[Tuple[str, str]] = field(default_factory=list)
    error_log: List[Tuple[str, str]] = field(default_factory=list)
    denied: List[str] = field(default_factory=list)
    out_of_scope: List[str] = field(default_factory=list)
    fetch_log: List[Tuple[str, float, str]] = field(default_factory=list)
    warc_files: List[str] = field(default_factory=list)

    @property
    def cdx_entries(self):
        return [e for c in self.captures for e in c.cdx]

    def counts(self) -> dict:
        return {
            "fetched": self.fetched,
            "captured": self.captured,
            "skipped_scope": self.skipped_scope,
            "robots_denied": self.robots_denied,
            "shifted_targets": self.shifted_targets,
            "errors": self.errors,
        }

    def to_json(self) -> dict:
        data = self.counts()
        data.update(
            skipped_limit=self.skipped_limit,
            retried=self.retried,
            captures=[c.to_json() for c in self.captures],
            rewrites=[list(r) for r in self.rewrites],
            flagged=[list(f) for f in self.flagged],
            error_log=[list(e) for e in self.error_log],
            warc_files=self.warc_files,
        )
        return data


class Crawler:
    def __init__(self, job: CrawlJob, store: WarcStore, canon=None, engine: Optional[FetchEngine] = None,
                 clock=None):
        self.job = job
        self.store = store
        self.canon = canon
        self.clock = clock or SystemClock()
        self.fetcher = Fetcher(job, engine, self.clock)
        self._first_observed: Dict[str, Tuple[str, CanonicalUri]] = {}

    def _provenance(self, uri: CanonicalUri):
        """(first observed URI, site id, current URI) for a capture's host."""
        if uri.onion is None or self.canon is None:
            return None, None, None
        key = str(uri.onion)
        if key not in self._first_observed:
            try:
                site = self.canon.site_for(uri.root())
            except UnknownUri:
                return uri.root(), None, uri.root()
            except CanonUnavailable:
                return None, None, None
            self._first_observed[key] = (site.site_id, site.timeline[0].uri)
        site_id, first = self._first_observed[key]
        return first, site_id, uri.root()

    def _process(self, entry: FrontierEntry):
        try:
            results = self.fetcher.fetch(entry)
        except TooManyRedirects as exc:
            return entry, exc.results, exc
        except FetchError as exc:
            return entry, [], exc
        return entry, results, None

    def crawl(self) -> CrawlReport:
        job = self.job
        report = CrawlReport()
        policy = ScopePolicy(set(job.scope.allowed_hosts), job.scope.allow_embedded_cross_host)
        frontier: Deque[FrontierEntry] = deque()
        seen: Set[str] = set()
        claimed: Set[str] = set()
        per_host: Dict[str, int] = {}
        # a shifted onion is the same site: dedup keys use the onion first seen
        first_onion: Dict[str, OnionAddress] = {}

        def dedup_key(uri: CanonicalUri) -> str:
            onion = uri.onion
            if onion is not None and str(onion) in first_onion:
                uri = with_onion(uri, first_onion[str(onion)])
            return str(uri)

        def enqueue(uri, depth, via, role):
            key = dedup_key(uri)
            if key in seen:
                return
            seen.add(key)
            if not in_scope(uri, policy, role):
                report.skipped_scope += 1
                report.out_of_scope.append(key)
                return
            frontier.append(FrontierEntry(uri, depth, via, self.clock.timestamp(), role))

        for seed in job.seeds:
            enqueue(seed, 0, None, NAVIGATION)

        workers = max(1, job.workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            inflight = set()
            while frontier or inflight:
                while frontier and len(inflight) < workers:
                    entry = next_target(frontier, self.canon)
                    for flag in entry.flags:
                        if flag != "shifted":
                            report.flagged.append((str(entry.uri), flag))
                    if entry.rewritten_from is not None:
                        report.shifted_targets += 1
                        report.rewrites.append((str(entry.rewritten_from), str(entry.uri)))
                        old, new = entry.rewritten_from.onion, entry.uri.onion
                        first_onion.setdefault(str(new), first_onion.get(str(old), old))
                        if policy.host_allowed(entry.rewritten_from.host):
                            policy.allowed_hosts.add(entry.uri.host)
                    key = dedup_key(entry.uri)
                    if key in claimed:
                        continue
                    if not in_scope(entry.uri, policy, entry.role):
                        report.skipped_scope += 1
                        report.out_of_scope.append(key)
                        continue
                    host = entry.uri.host
                    if per_host.get(host, 0) >= job.max_pages_per_host:
                        report.skipped_limit += 1
                        continue
                    per_host[host] = per_host.get(host, 0) + 1
                    claimed.add(key)
                    inflight.add(pool.submit(self._process, entry))
                if not inflight:
                    continue
                done, inflight = wait(inflight, return_when=FIRST_COMPLETED)
                for fut in done:
                    entry, results, error = fut.result()
                    if (isinstance(error, (ConnectFailed, Timeout)) and not results
                            and entry.uri.onion is not None and "retry" not in entry.flags):
                        # the onion may have shifted while the entry waited; re-consult once
                        claimed.discard(dedup_key(entry.uri))
                        per_host[entry.uri.host] -= 1
                        report.retried += 1
                        frontier.appendleft(replace(entry, rewritten_from=None, flags=("retry",)))
                        continue
                    self._record(entry, results, error, report, claimed, enqueue, dedup_key)

        report.fetch_log = list(self.fetcher.politeness.log)
        report.warc_files = [str(p) for p in self.store.files]
        return report

    def _record(self, entry, results, error, report, claimed, enqueue, dedup_key=str):
        job = self.job
        if isinstance(error, RobotsDenied):
            report.robots_denied += 1
            report.denied.append(str(entry.uri))
        elif error is not None:
            report.errors += 1
            report.error_log.append((str(entry.uri), f"{type(error).__name__}: {error}"))
        for result in results:
            report.fetched += 1
            claimed.add(dedup_key(result.uri))
            first, site_id, current = self._provenance(result.uri)
            try:
                cdx = self.store.write_capture(result, first, site_id, current)
            except (WarcError, OSError) as exc:
                raise StoreFailure(f"cannot store capture of {result.uri}: {exc}") from exc
            report.captured += 1
            report.captures.append(Capture(str(result.uri), result.fetch_started_at, result.response_status,
                                           str(first) if first else None, cdx))
        if not results:
            return
        final = results[-1]
        if final.response_status in REDIRECT_STATUSES and final.header("Location"):
            try:
                target = canonicalize_uri(urljoin(str(final.uri), final.header("Location")))
                enqueue(target, entry.depth, final.uri, entry.role)
            except ValueError:
                pass
        if entry.role != NAVIGATION or not is_html(final.content_type):
            return
        for link, role in extract_links(final.body, final.content_type, final.uri):
            if role == NAVIGATION:
                if entry.depth + 1 > job.max_depth:
                    continue
                enqueue(link, entry.depth + 1, final.uri, role)
            else:
                enqueue(link, entry.depth, final.uri, role)


def crawl(job: CrawlJob, store: Optional[WarcStore] = None, canon=None, engine=None, clock=None) -> CrawlReport:
    """Run one crawl job to completion."""
    own_store = store is None
    if store is None:
        store = WarcStore(job.output_dir or ".", job.job_id, gzip=job.gzip)
    try:
        return Crawler(job, store, canon, engine, clock).crawl()
    finally:
        if own_store:
            store.close()
