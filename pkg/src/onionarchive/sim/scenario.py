"""Scripted end-to-end scenarios under virtual time.

A scenario file is JSON::

    {"name": "...", "start": "20240101000000",
     "sites": [{"name": "news", "pages": 50, "seed": 1,
                "eras": [{"active_from": "20240101000000"},
                         {"active_from": "20240301000000"}]}],
     "script": [{"action": "ingest", "site": "news", "source": "list"},
                {"action": "crawl", "id": "c1", "sites": ["news"], "max_depth": 3},
                {"action": "assert", "check": "captured_all", "crawl": "c1", "site": "news"}]}

Actions are ``ingest``, ``advance``, ``shift``, ``crawl``, ``query`` and
``assert``. Every assertion is evaluated and reported with its evidence.
"""
from __future__ import annotations

import json
import random
import re
import socket
import tempfile
import time
import urllib.error
import urllib.parse
import urllib.request
from collections import Counter, defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .. import service
from ..canonicalizer import Observation
from ..clock import VirtualClock
from ..core import Timestamp14, canonicalize_uri
from ..crawler.crawl import CrawlJob, CrawlReport, ScopePolicy, crawl
from ..replay import ReplayEngine
from ..replay import serve as serve_replay
from ..warc import CdxIndex, WarcStore, build_index, warc_files_in
from .network import NetworkHandle
from .sites import SimSite, generate_site, random_onion

ACTIONS = ("ingest", "advance", "shift", "crawl", "query", "assert")
DEFAULT_START = "20240101000000"


class ScriptError(ValueError):
    """The scenario refers to something it never defined."""


@dataclass
class Scenario:
    name: str
    sites: List[SimSite]
    clock: VirtualClock
    script: List[dict]
    start: Timestamp14 = Timestamp14(DEFAULT_START)

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        start = Timestamp14(data.get("start", DEFAULT_START))
        specs = data.get("sites", [])
        names = [s["name"] for s in specs]
        if len(set(names)) != len(names):
            raise ScriptError("duplicate site names")
        eras = {s["name"]: _eras(s, start) for s in specs}
        sites = []
        for spec in specs:
            external = []
            for link in spec.get("external_links", []):
                if isinstance(link, dict):
                    if link.get("site") not in eras:
                        raise ScriptError(f"external link to undefined site {link.get('site')!r}")
                    onion, _ = eras[link["site"]][link.get("era", 0)]
                    external.append(f"http://{onion}{link.get('path', '/')}")
                else:
                    external.append(link)
            sites.append(generate_site(
                spec["name"], eras[spec["name"]], n_pages=spec.get("pages", 50), seed=spec.get("seed", 0),
                branching=spec.get("branching", 4), script_pages=spec.get("script_pages", 0),
                robots=spec.get("robots"), external_links=external,
                private_pages=spec.get("private_pages", 0),
            ))
        scenario = cls(data.get("name", "scenario"), sites, VirtualClock(start), list(data.get("script", [])), start)
        scenario.validate()
        return scenario

    def site(self, name: str) -> SimSite:
        for s in self.sites:
            if s.name == name:
                return s
        raise ScriptError(f"undefined site {name!r}")

    def validate(self):
        """Reject scripts that reference undefined sites, crawls or queries."""
        crawls, queries = set(), set()
        for i, action in enumerate(self.script):
            kind = action.get("action")
            where = f"script[{i}] ({kind})"
            if kind not in ACTIONS:
                raise ScriptError(f"{where}: unknown action")
            for name in ([action["site"]] if "site" in action else []) + list(action.get("sites", [])):
                try:
                    self.site(name)
                except ScriptError as exc:
                    raise ScriptError(f"{where}: {exc}") from None
            if kind in ("ingest", "shift") and "site" not in action and "sites" not in action:
                raise ScriptError(f"{where}: needs a site")
            if kind == "crawl":
                cid = action.get("id")
                if not cid or cid in crawls:
                    raise ScriptError(f"{where}: crawl needs a unique id")
                if not action.get("sites"):
                    raise ScriptError(f"{where}: crawl needs sites")
                crawls.add(cid)
            if kind == "query":
                qid = action.get("id")
                if not qid or qid in queries:
                    raise ScriptError(f"{where}: query needs a unique id")
                queries.add(qid)
            if kind == "assert":
                check = action.get("check")
                if check not in CHECKS:
                    raise ScriptError(f"{where}: unknown check {check!r}")
                if "crawl" in action and action["crawl"] not in crawls:
                    raise ScriptError(f"{where}: undefined crawl {action['crawl']!r}")
                if "query" in action and action["query"] not in queries:
                    raise ScriptError(f"{where}: undefined query {action['query']!r}")


def _eras(spec: dict, start: Timestamp14):
    rng = random.Random(f"{spec.get('seed', 0)}:{spec['name']}")
    raw = spec.get("eras") or [{"active_from": start}]
    out = []
    for era in raw:
        onion = era.get("onion") or random_onion(rng, v3=bool(spec.get("v3", False)))
        out.append((onion, Timestamp14(era.get("active_from", start))))
    return out


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return Scenario.from_json(json.load(fh))


@dataclass
class AssertionResult:
    index: int
    check: str
    passed: bool
    evidence: dict

    def to_json(self) -> dict:
        return {"index": self.index, "check": self.check, "passed": self.passed, "evidence": self.evidence}


@dataclass
class ScenarioReport:
    name: str
    assertions: List[AssertionResult] = field(default_factory=list)
    timings: List[dict] = field(default_factory=list)
    audit: List[dict] = field(default_factory=list)
    crawls: Dict[str, dict] = field(default_factory=dict)
    queries: Dict[str, object] = field(default_factory=dict)
    ingests: List[dict] = field(default_factory=list)
    onion_lookups: int = 0
    elapsed_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def capture_sets(self) -> Dict[str, list]:
        return {cid: c["captures"] for cid, c in self.crawls.items()}

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "assertions": [a.to_json() for a in self.assertions],
            "timings": self.timings,
            "crawls": self.crawls,
            "queries": self.queries,
            "ingests": self.ingests,
            "audit": self.audit,
            "onion_lookups": self.onion_lookups,
            "elapsed_s": round(self.elapsed_s, 3),
        }


@contextmanager
def _count_onion_lookups(counter: list):
    """Count local name resolutions of ``.onion`` names while active."""
    real = socket.getaddrinfo

    def patched(host, *args, **kwargs):
        if isinstance(host, (str, bytes)):
            name = host.decode() if isinstance(host, bytes) else host
            if name.lower().rstrip(".").endswith(".onion"):
                counter.append(name)
        return real(host, *args, **kwargs)

    socket.getaddrinfo = patched
    try:
        yield
    finally:
        socket.getaddrinfo = real


@dataclass
class _CrawlRun:
    id: str
    job: CrawlJob
    report: CrawlReport
    sites: List[str]
    audit_window: tuple


class _Runner:
    def __init__(self, scenario: Scenario, work_dir: Path):
        self.s = scenario
        self.clock = scenario.clock
        self.work = work_dir
        self.report = ScenarioReport(scenario.name)
        self.crawls: Dict[str, _CrawlRun] = {}
        self.queries: Dict[str, object] = {}
        self.scheduled: Dict[str, int] = defaultdict(int)
        self.lookups: list = []
        self.warc_dir = work_dir / "warcs"
        self.warc_dir.mkdir(parents=True, exist_ok=True)

    # --- helpers -------------------------------------------------------
    def site_of_host(self, host: str) -> Optional[SimSite]:
        for site in self.s.sites:
            for onion, _ in site.eras:
                if host == onion or host.endswith("." + onion):
                    return site
        return None

    def era_of_host(self, site: SimSite, host: str) -> Optional[int]:
        for i, (onion, _) in enumerate(site.eras):
            if host == onion or host.endswith("." + onion):
                return i
        return None

    def current_onion(self, site: SimSite) -> str:
        onion = site.onion_at(self.clock.timestamp())
        return onion or site.eras[0][0]

    def observe(self, site: SimSite, era: int, source: str, alias: str):
        onion = site.eras[era][0]
        obs = Observation(f"http://{onion}/", source, alias, self.clock.timestamp())
        try:
            outcome = self.canon.observe(obs)
        except Exception as exc:  # recorded, then surfaced by assertions
            outcome = {"error": type(exc).__name__, "detail": str(exc)}
        self.report.ingests.append({"at": obs.observed_at, "site": site.name, "era": era,
                                    "uri": str(obs.uri), "outcome": outcome})

    def http_get(self, path: str):
        url = self.replay.url + path
        try:
            with urllib.request.urlopen(url, timeout=10) as resp:
                return resp.status, dict(resp.headers), resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, dict(exc.headers), exc.read()

    def rebuild_index(self):
        self.replay.engine.reload(build_index(warc_files_in(self.warc_dir)))

    # --- actions -------------------------------------------------------
    def do_ingest(self, a: dict):
        for name in [a["site"]] if "site" in a else a["sites"]:
            site = self.s.site(name)
            era = a.get("era")
            if era is None:
                era = site.era_at(self.clock.timestamp())
                era = 0 if era is None else era
            self.observe(site, era, a.get("source", "sim"), a.get("alias", name))

    def do_advance(self, a: dict):
        if "to" in a:
            target = Timestamp14(a["to"]).to_datetime().timestamp()
        else:
            target = self.clock.now() + a.get("seconds", 0) + 86400 * a.get("days", 0)
        self.clock.advance_to(target)

    def do_shift(self, a: dict):
        for name in [a["site"]] if "site" in a else a["sites"]:
            site = self.s.site(name)
            current = site.era_at(self.clock.timestamp()) or 0
            nxt = max(current, self.scheduled[name]) + 1
            if nxt >= len(site.eras):
                raise ScriptError(f"shift: site {name!r} has no era after {nxt - 1}")
            self.scheduled[name] = nxt
            source, alias = a.get("source", "sim"), a.get("alias", name)
            self.clock.call_at(site.eras[nxt][1], lambda s=site, e=nxt: self.observe(s, e, source, alias))

    def do_crawl(self, a: dict):
        seeds, hosts = [], set()
        for name in a["sites"]:
            site = self.s.site(name)
            onion = site.eras[a["seed_era"]][0] if "seed_era" in a else self.current_onion(site)
            seeds.append(f"http://{onion}/")
            hosts.add(onion)
        job = CrawlJob(
            seeds=seeds,
            scope=ScopePolicy(hosts, bool(a.get("allow_embedded_cross_host", False))),
            proxy=self.net.proxy_address,
            delay_ms=a.get("delay_ms", 1000),
            robots=a.get("robots", "obey"),
            max_depth=a.get("max_depth", 3),
            max_pages_per_host=a.get("max_pages_per_host", 10000),
            job_id=a["id"],
            timeout_s=a.get("timeout_s", 10.0),
            workers=a.get("workers", 1),
        )
        before = len(self.net.proxy.audit)
        store = WarcStore(self.warc_dir, job.job_id, gzip=bool(a.get("gzip", False)))
        try:
            rep = crawl(job, store, self.canon, clock=self.clock)
        finally:
            store.close()
        after = len(self.net.proxy.audit)
        self.crawls[a["id"]] = _CrawlRun(a["id"], job, rep, list(a["sites"]), (before, after))
        self.report.crawls[a["id"]] = {
            **rep.counts(),
            "retried": rep.retried,
            "rewrites": [list(r) for r in rep.rewrites],
            "captures": sorted([c.uri, c.timestamp, c.status, c.first_observed_uri] for c in rep.captures),
        }
        self.rebuild_index()

    def do_query(self, a: dict):
        kind = a.get("kind", "current")
        site = self.s.site(a["site"]) if "site" in a else None
        if site is not None:
            era = a.get("era")
            onion = self.current_onion(site) if era is None else site.eras[era][0]
            uri = f"http://{onion}{a.get('path', '/')}"
        else:
            uri = a["uri"]
        try:
            if kind == "current":
                sid, cur = self.canon.current_uri(canonicalize_uri(uri).root())
                result = {"site_id": sid, "current_uri": str(cur)}
            elif kind == "timeline":
                result = self.canon.site_for(canonicalize_uri(uri).root()).to_json()
            elif kind == "at":
                result = {"uri_at": str(self.canon.uri_at(canonicalize_uri(uri).root(), self._time(a["at"])))}
            elif kind == "lookup":
                q = urllib.parse.urlencode({"uri": uri, "timestamp": self._time(a["at"])})
                status, _, body = self.http_get(f"/api/v1/lookup?{q}")
                result = {"status": status, **json.loads(body)}
            elif kind == "timemap":
                status, _, body = self.http_get(f"/timemap/link/{uri}")
                result = {"status": status, "body": body.decode("utf-8")}
            else:
                raise ScriptError(f"unknown query kind {kind!r}")
        except ScriptError:
            raise
        except Exception as exc:
            result = {"error": type(exc).__name__, "detail": str(exc)}
        self.queries[a["id"]] = result
        self.report.queries[a["id"]] = result

    def _time(self, spec) -> Timestamp14:
        """A timestamp, or ``{"site": S, "era": k, "offset_s": d}`` relative to an era start."""
        if isinstance(spec, dict):
            site = self.s.site(spec["site"])
            return site.eras[spec.get("era", 0)][1].shifted(spec.get("offset_s", 0))
        if spec == "now":
            return self.clock.timestamp()
        return Timestamp14(spec)

    def do_assert(self, a: dict, index: int):
        check = CHECKS[a["check"]]
        try:
            passed, evidence = check(self, a)
        except ScriptError:
            raise
        except Exception as exc:
            passed, evidence = False, {"exception": f"{type(exc).__name__}: {exc}"}
        self.report.assertions.append(AssertionResult(index, a["check"], bool(passed), evidence))

    def run(self) -> ScenarioReport:
        started = time.monotonic()
        with _count_onion_lookups(self.lookups):
            self.canon_service = service.serve(self.work / "canon")
            self.canon = service.CanonClient(self.canon_service.url, timeout=10)
            self.net = NetworkHandle(self.s.sites, self.clock)
            self.replay = serve_replay(ReplayEngine(CdxIndex([]), self.canon))
            try:
                for i, action in enumerate(self.s.script):
                    t0 = time.monotonic()
                    kind = action["action"]
                    if kind == "assert":
                        self.do_assert(action, i)
                    else:
                        getattr(self, f"do_{kind}")(action)
                    self.report.timings.append({"index": i, "action": kind, "at": self.clock.timestamp(),
                                                "wall_s": round(time.monotonic() - t0, 4)})
            finally:
                self.replay.close()
                self.net.close()
                self.canon_service.close()
        self.report.audit = [e.to_json() for e in self.net.audit]
        self.report.onion_lookups = len(self.lookups)
        self.report.elapsed_s = time.monotonic() - started
        return self.report


def run_scenario(scenario, work_dir=None) -> ScenarioReport:
    """Execute ``scenario`` (a Scenario, a dict or a path) and report every assertion."""
    if isinstance(scenario, dict):
        scenario = Scenario.from_json(scenario)
    elif not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    if work_dir is None:
        with tempfile.TemporaryDirectory(prefix="onionsim-") as tmp:
            return _Runner(scenario, Path(tmp)).run()
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    return _Runner(scenario, work).run()


# --- assertion checks ------------------------------------------------------

def _disallowed(site: SimSite) -> List[str]:
    if not site.robots:
        return []
    out, applies = [], False
    for line in site.robots.splitlines():
        key, _, value = line.partition(":")
        key, value = key.strip().lower(), value.strip()
        if key == "user-agent":
            applies = value == "*"
        elif key == "disallow" and applies and value:
            out.append(value)
    return out


def expected_paths(site: SimSite, max_depth: int, robots: str) -> set:
    """Independent BFS oracle: pages within ``max_depth`` plus their requisites."""
    blocked = _disallowed(site) if robots == "obey" else []
    pages = site.reachable(max_depth, blocked)
    out = set(pages)
    for p in pages:
        for r in site.pages[p].requisites:
            if r.startswith("/") and not any(r.startswith(b) for b in blocked):
                out.add(r)
    return out


def _site_captures(runner: _Runner, run: _CrawlRun, site: SimSite):
    out = []
    for c in run.report.captures:
        uri = canonicalize_uri(c.uri)
        if runner.site_of_host(uri.host) is site:
            out.append((uri, c))
    return out


def _check_crawl_count(r: _Runner, a: dict):
    rep = r.crawls[a["crawl"]].report
    value = rep.counts().get(a.get("field", "captured"), getattr(rep, a.get("field", "captured"), None))
    ok = True
    if "equals" in a:
        ok &= value == a["equals"]
    if "min" in a:
        ok &= value >= a["min"]
    if "max" in a:
        ok &= value <= a["max"]
    return ok, {"field": a.get("field", "captured"), "value": value}


def _check_captured_all(r: _Runner, a: dict):
    run = r.crawls[a["crawl"]]
    site = r.s.site(a["site"])
    expected = expected_paths(site, run.job.max_depth, run.job.robots)
    counts = Counter(u.path for u, c in _site_captures(r, run, site))
    missing = sorted(expected - set(counts))
    extra = sorted(set(counts) - expected)
    dupes = sorted(p for p, n in counts.items() if n > 1)
    return not (missing or extra or dupes), {
        "expected": len(expected), "captured": sum(counts.values()),
        "missing": missing[:20], "extra": extra[:20], "duplicates": dupes[:20],
    }


def _check_replay_identical(r: _Runner, a: dict):
    run = r.crawls[a["crawl"]]
    site = r.s.site(a["site"])
    paths = a.get("paths")
    compared, mismatches = 0, []
    for uri, cap in _site_captures(r, run, site):
        if paths is not None and uri.path not in paths:
            continue
        status, headers, body = r.http_get(f"/replay/{cap.timestamp}id_/{uri}")
        _, _, served = site.render(uri.path)
        compared += 1
        if status != cap.status or body != served:
            mismatches.append({"uri": str(uri), "timestamp": cap.timestamp, "status": status,
                               "bytes": len(body), "served_bytes": len(served)})
    return compared > 0 and not mismatches, {"compared": compared, "mismatches": mismatches[:20]}


_TM_LINE = re.compile(r'<([^>]*)>;\s*rel="([^"]*)"(?:;\s*datetime="([^"]*)")?')


def parse_timemap(text: str) -> List[dict]:
    out = []
    for m in _TM_LINE.finditer(text):
        out.append({"uri": m.group(1), "rel": m.group(2).split(), "datetime": m.group(3)})
    return out


def _check_timemap_spans(r: _Runner, a: dict):
    site = r.s.site(a["site"])
    path = a.get("path", "/")
    era = a.get("uri_era")
    onion = r.current_onion(site) if era is None else site.eras[era][0]
    status, _, body = r.http_get(f"/timemap/link/http://{onion}{path}")
    links = parse_timemap(body.decode("utf-8", "replace"))
    mementos = [l for l in links if "memento" in l["rel"]]
    listed = []
    for m in mementos:
        stamp, _, original = m["uri"].partition("/replay/")[2].partition("/")
        listed.append((stamp, canonicalize_uri(original)))
    index = r.replay.engine.index
    expected = sorted(
        ((e.timestamp, canonicalize_uri(f"http://{o}{path}")) for o, _ in site.eras
         for e in index.captures(canonicalize_uri(f"http://{o}{path}"))),
        key=lambda t: (t[0], str(t[1])),
    )
    eras_seen = sorted({r.era_of_host(site, u.host) for _, u in listed})
    want_eras = a.get("eras", list(range(len(site.eras))))
    ok = (status == 200 and listed == expected
          and [s for s, _ in listed] == sorted(s for s, _ in listed)
          and set(want_eras) <= set(eras_seen))
    return ok, {"status": status, "listed": len(listed), "expected": len(expected), "eras": eras_seen}


def _check_resolve_via_era(r: _Runner, a: dict):
    site = r.s.site(a["site"])
    path = a.get("path", "/")
    host_era = a.get("uri_era")
    onion = r.current_onion(site) if host_era is None else site.eras[host_era][0]
    at = r._time(a["at"])
    q = urllib.parse.urlencode({"uri": f"http://{onion}{path}", "timestamp": at})
    status, _, body = r.http_get(f"/api/v1/lookup?{q}")
    data = json.loads(body)
    if status != 200:
        return False, {"status": status, "body": data}
    resolved = canonicalize_uri(data["resolved_uri"])
    got = r.era_of_host(site, resolved.host)
    substituted = any(step.get("step") == "era" and step.get("result") for step in data["trace"])
    ok = got == a["expect_era"] and (substituted or not a.get("require_substitution", True))
    return ok, {"resolved_uri": str(resolved), "era": got, "capture": data["capture_timestamp"],
                "trace": data["trace"]}


def _check_post_shift_era(r: _Runner, a: dict):
    run = r.crawls[a["crawl"]]
    site = r.s.site(a["site"])
    wrong = []
    per_era = Counter()
    for uri, cap in _site_captures(r, run, site):
        era = r.era_of_host(site, uri.host)
        per_era[era] += 1
        if site.eras[era][0] != site.onion_at(Timestamp14(cap.timestamp)):
            wrong.append({"uri": cap.uri, "timestamp": cap.timestamp})
    need = a.get("era")
    ok = not wrong and (need is None or per_era[need] > 0)
    return ok, {"per_era": {str(k): v for k, v in sorted(per_era.items())}, "wrong_era": wrong[:20]}


def _check_no_out_of_scope(r: _Runner, a: dict):
    runs = [r.crawls[a["crawl"]]] if "crawl" in a else list(r.crawls.values())
    violations = []
    skipped = 0
    for run in runs:
        allowed = {o for name in run.sites for o, _ in r.s.site(name).eras}
        ok_host = lambda h: any(h == o or h.endswith("." + o) for o in allowed)  # noqa: E731
        for host, _, what in run.report.fetch_log:
            if not ok_host(host):
                violations.append({"crawl": run.id, "fetch": what})
        lo, hi = run.audit_window
        for entry in r.net.proxy.audit[lo:hi]:
            if not ok_host(entry.host):
                violations.append({"crawl": run.id, "connect": entry.host})
        skipped += run.report.skipped_scope
    return not violations, {"crawls": len(runs), "violations": violations[:20], "links_skipped": skipped}


def _check_politeness(r: _Runner, a: dict):
    runs = [r.crawls[a["crawl"]]] if "crawl" in a else list(r.crawls.values())
    violations, gaps = [], 0
    for run in runs:
        delay = run.job.delay_ms / 1000.0
        last: Dict[str, float] = {}
        for host, started, what in sorted(run.report.fetch_log, key=lambda t: t[1]):
            if host in last:
                gaps += 1
                if started - last[host] < delay - 1e-6:
                    violations.append({"crawl": run.id, "host": host, "gap_s": started - last[host]})
            last[host] = started
    return gaps > 0 and not violations, {"gaps_checked": gaps, "violations": violations[:20]}


def _check_no_local_dns(r: _Runner, a: dict):
    pre_resolved = r.net.local_resolutions()
    requests = len(r.net.proxy.audit)
    return requests > 0 and not r.lookups and pre_resolved == 0, {
        "proxy_requests": requests, "local_onion_lookups": len(r.lookups), "pre_resolved_connects": pre_resolved}


def _check_captured_path(r: _Runner, a: dict):
    run = r.crawls[a["crawl"]]
    site = r.s.site(a["site"])
    paths = [u.path for u, _ in _site_captures(r, run, site)]
    present = a["path"] in paths
    return present == a.get("expect", True), {"path": a["path"], "captured": present}


def _check_query_result(r: _Runner, a: dict):
    result = r.queries[a["query"]]
    value = result.get(a.get("field", "current_uri")) if isinstance(result, dict) else None
    want = a.get("equals")
    if isinstance(want, dict) and "site" in want:
        site = r.s.site(want["site"])
        want = f"http://{site.eras[want.get('era', 0)][0]}{want.get('path', '/')}"
    return value == want, {"value": value, "expected": want}


CHECKS = {
    "crawl_count": _check_crawl_count,
    "captured_all": _check_captured_all,
    "replay_identical": _check_replay_identical,
    "timemap_spans": _check_timemap_spans,
    "resolve_via_era": _check_resolve_via_era,
    "post_shift_captures_era": _check_post_shift_era,
    "no_out_of_scope": _check_no_out_of_scope,
    "politeness": _check_politeness,
    "no_local_dns": _check_no_local_dns,
    "captured_path": _check_captured_path,
    "query_result": _check_query_result,
}
