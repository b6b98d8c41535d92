"""Command-line entry point.

Structured output goes to stdout as JSON, logs to stderr. Exit status is 0 on
success, 1 on an operational error and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading
from pathlib import Path
from typing import List, Optional

from . import service
from .canonicalizer import CanonError
from .core import Timestamp14, canonicalize_uri
from .crawler.crawl import crawl, load_job
from .ingest import SourceSpec, ingest_history, parse_list
from .replay import ReplayEngine
from .replay import serve as serve_replay
from .service import CanonClient, CanonUnavailable
from .sim.scenario import ScriptError, run_scenario
from .warc import CdxIndex, WarcError, build_index, read_records, warc_files_in

log = logging.getLogger("onionarchive")

ENV_CANON = "ONIONARCHIVE_CANON"
DEFAULT_CANON = "http://127.0.0.1:8470"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj):
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, ensure_ascii=False)
    sys.stdout.write("\n")
    sys.stdout.flush()


def _client(args) -> CanonClient:
    endpoint = args.canon or os.environ.get(ENV_CANON) or DEFAULT_CANON
    if not endpoint.startswith(("http://", "https://")):
        raise UsageError(f"canonicalizer endpoint must be an http(s) URL: {endpoint!r}")
    return CanonClient(endpoint, timeout=args.timeout)


def _wait_forever(label: str, url: str):
    log.info("%s listening on %s", label, url)
    _emit({"service": label, "url": url})
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass


def cmd_canon_serve(args):
    svc = service.serve(args.data_dir, args.host, args.port)
    try:
        _wait_forever("canon", svc.url)
    finally:
        svc.close()
    return 0


def cmd_ingest(args):
    spec = SourceSpec(args.source, column_map={"alias": args.alias_column, "uri": args.uri_column},
                      default_observed_at=args.observed_at or Timestamp14.now())
    report = []
    if args.history:
        files = sorted(Path(args.file).glob("*.csv"))
        snaps = [(Timestamp14(p.stem[:14]), p) for p in files]
        observations = ingest_history(snaps, spec, report)
    else:
        if args.observed_at is None:
            log.info("no --observed-at given; stamping rows with the current time")
        observations = parse_list(args.file, spec, report)
    client = _client(args)
    counts, results = {}, []
    for obs in observations:
        outcome = client.observe(obs)
        kind = outcome.get("outcome", "unknown")
        counts[kind] = counts.get(kind, 0) + 1
        results.append({"uri": str(obs.uri), "alias": obs.alias, "observed_at": obs.observed_at, **outcome})
    _emit({"observations": len(observations), "outcomes": counts, "issues": [i.to_json() for i in report],
           "results": results if args.verbose_results else None})
    return 0


def cmd_crawl(args):
    job = load_job(args.jobfile)
    if args.output_dir:
        job.output_dir = args.output_dir
    canon = None
    endpoint = args.canon or os.environ.get(ENV_CANON) or job.canon_url
    if endpoint:
        canon = CanonClient(endpoint, timeout=args.timeout)
    report = crawl(job, canon=canon)
    _emit(report.to_json())
    return 0


def _load_index(args) -> CdxIndex:
    if args.cdx:
        return CdxIndex.load(args.cdx)
    files = []
    for d in args.warc_dir:
        files.extend(warc_files_in(d))
    return build_index(files)


def cmd_replay_serve(args):
    canon = None
    endpoint = args.canon or os.environ.get(ENV_CANON)
    if endpoint:
        canon = CanonClient(endpoint, timeout=args.timeout)
    engine = ReplayEngine(_load_index(args), canon)
    svc = serve_replay(engine, args.host, args.port)
    try:
        _wait_forever("replay", svc.url)
    finally:
        svc.close()
    return 0


def cmd_query(args):
    client = _client(args)
    uri = canonicalize_uri(args.uri)
    if args.kind == "current":
        site_id, current = client.current_uri(uri)
        _emit({"uri": str(uri), "site_id": site_id, "current_uri": str(current)})
    elif args.kind == "timeline":
        _emit(client.site_for(uri).to_json())
    else:
        if not args.timestamp:
            raise UsageError("query at: --timestamp is required")
        at = Timestamp14(args.timestamp)
        _emit({"uri": str(uri), "timestamp": at, "uri_at": str(client.uri_at(uri, at))})
    return 0


def cmd_warc_verify(args):
    status = 0
    out = []
    for path in args.files:
        try:
            kinds = {}
            for rec in read_records(path, verify=True):
                kinds[rec.kind] = kinds.get(rec.kind, 0) + 1
            out.append({"file": str(path), "ok": True, "records": sum(kinds.values()), "by_type": kinds})
        except (WarcError, OSError) as exc:
            status = 1
            out.append({"file": str(path), "ok": False, "error": f"{type(exc).__name__}: {exc}"})
    _emit(out[0] if len(out) == 1 else out)
    return status


def cmd_warc_index(args):
    files = [Path(f) for f in args.files]
    index = build_index(files)
    if args.output:
        index.save(args.output)
        _emit({"entries": len(index), "output": args.output})
    else:
        sys.stdout.write(CdxIndex.HEADER + "\n")
        for e in index.entries:
            sys.stdout.write(e.to_line() + "\n")
    return 0


def cmd_collisions_list(args):
    _emit({"pending": _client(args).pending()})
    return 0


def cmd_collisions_resolve(args):
    _emit(_client(args).resolve(args.collision_id, args.decision, args.site_id))
    return 0


def cmd_scenario_run(args):
    report = run_scenario(args.scenario, args.work_dir)
    data = report.to_json()
    if not args.full:
        data.pop("audit")
    _emit(data)
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--canon", help=f"canonicalizer base URL (default ${ENV_CANON} or {DEFAULT_CANON})")
    common.add_argument("--timeout", type=float, default=10.0, help="HTTP timeout in seconds")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="onionarchive", description="Archive and replay onion services across address shifts.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    canon = sub.add_parser("canon", help="canonicalizer service")
    canon_sub = canon.add_subparsers(dest="canon_command", parser_class=_Parser)
    serve = canon_sub.add_parser("serve", parents=[common], help="run the canonicalizer HTTP service")
    serve.add_argument("--data-dir", required=True)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8470)
    serve.set_defaults(func=cmd_canon_serve)

    ingest = sub.add_parser("ingest", parents=[common], help="ingest an onion list")
    ingest.add_argument("file", help="CSV list, or a directory of <timestamp>.csv snapshots with --history")
    ingest.add_argument("--source", required=True, help="source tag recorded with every observation")
    ingest.add_argument("--observed-at", help="14-digit timestamp for rows without one")
    ingest.add_argument("--alias-column", default="alias")
    ingest.add_argument("--uri-column", default="onion_uri")
    ingest.add_argument("--history", action="store_true", help="treat FILE as a directory of dated snapshots")
    ingest.add_argument("--verbose-results", action="store_true", help="include per-row outcomes")
    ingest.set_defaults(func=cmd_ingest)

    crawl_p = sub.add_parser("crawl", parents=[common], help="run a crawl job file")
    crawl_p.add_argument("jobfile")
    crawl_p.add_argument("--output-dir")
    crawl_p.set_defaults(func=cmd_crawl)

    replay = sub.add_parser("replay", help="replay service")
    replay_sub = replay.add_subparsers(dest="replay_command", parser_class=_Parser)
    rserve = replay_sub.add_parser("serve", parents=[common], help="serve WARC captures")
    src = rserve.add_mutually_exclusive_group(required=True)
    src.add_argument("--warc-dir", action="append")
    src.add_argument("--cdx")
    rserve.add_argument("--host", default="127.0.0.1")
    rserve.add_argument("--port", type=int, default=8480)
    rserve.set_defaults(func=cmd_replay_serve)

    query = sub.add_parser("query", parents=[common], help="query the canonicalizer")
    query.add_argument("kind", choices=["current", "timeline", "at"])
    query.add_argument("--uri", required=True)
    query.add_argument("--timestamp")
    query.set_defaults(func=cmd_query)

    warc = sub.add_parser("warc", help="inspect WARC files")
    warc_sub = warc.add_subparsers(dest="warc_command", parser_class=_Parser)
    verify = warc_sub.add_parser("verify", parents=[common], help="parse and check digests")
    verify.add_argument("files", nargs="+")
    verify.set_defaults(func=cmd_warc_verify)
    index = warc_sub.add_parser("index", parents=[common], help="build a CDX index")
    index.add_argument("files", nargs="+")
    index.add_argument("-o", "--output")
    index.set_defaults(func=cmd_warc_index)

    coll = sub.add_parser("collisions", help="pending collisions")
    coll_sub = coll.add_subparsers(dest="collisions_command", parser_class=_Parser)
    clist = coll_sub.add_parser("list", parents=[common])
    clist.set_defaults(func=cmd_collisions_list)
    cres = coll_sub.add_parser("resolve", parents=[common])
    cres.add_argument("collision_id")
    cres.add_argument("--decision", required=True, choices=["merge_into", "new_site"])
    cres.add_argument("--site-id")
    cres.set_defaults(func=cmd_collisions_resolve)

    scen = sub.add_parser("scenario", help="simulation scenarios")
    scen_sub = scen.add_subparsers(dest="scenario_command", parser_class=_Parser)
    srun = scen_sub.add_parser("run", parents=[common], help="run a scenario file")
    srun.add_argument("scenario")
    srun.add_argument("--work-dir")
    srun.add_argument("--full", action="store_true", help="include the proxy audit log")
    srun.set_defaults(func=cmd_scenario_run)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            # a group without its subcommand, or nothing at all
            chosen = [a for a in argv if not a.startswith("-")][:1]
            target = parser._subparsers._group_actions[0].choices.get(chosen[0]) if chosen else None
            (target or parser).print_help(sys.stderr)
            return 2
        logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                            level=logging.WARNING - 10 * min(args.verbose, 2))
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except ScriptError as exc:
        print(json.dumps({"error": "ScriptError", "detail": str(exc)}), file=sys.stderr)
        return 2
    except (CanonUnavailable, CanonError, WarcError, OSError, ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
