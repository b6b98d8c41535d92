import sys
from pathlib import Path

import pytest

from onionarchive.core import Timestamp14, canonicalize_uri
from onionarchive.crawler.fetch import FetchResult, build_request

sys.path.insert(0, str(Path(__file__).parent))

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "onionarchive" / "sim" / "scenarios"

ONION_A = "bfnews3u2ox4m4ty.onion"
ONION_B = "nytimes3xbfgragh.onion"
ONION_C = "facebookcorewwwi.onion"
ONION_V3 = "duckduckgogg42xjoc72x3sjasowoarfbgcmvfimaftt6twagswzczad.onion"


def make_fetch(uri, body=b"<html><body>hi</body></html>", status=200, ts="20240101000000",
               content_type="text/html", extra_headers=(), chunked=False):
    """A FetchResult as the engine would build it, without any network."""
    uri = canonicalize_uri(uri)
    request, req_headers = build_request(uri, "test-agent")
    headers = [("Content-Type", content_type)] + list(extra_headers)
    if chunked:
        headers.append(("Transfer-Encoding", "chunked"))
        half = len(body) // 2
        parts = [body[:half], body[half:]]
        raw = b"".join(b"%x\r\n%s\r\n" % (len(p), p) for p in parts if p) + b"0\r\n\r\n"
    else:
        headers.append(("Content-Length", str(len(body))))
        raw = body
    reason = {200: "OK", 302: "Found", 404: "Not Found"}.get(status, "X")
    head = (f"HTTP/1.1 {status} {reason}\r\n" + "".join(f"{k}: {v}\r\n" for k, v in headers) + "\r\n").encode()
    return FetchResult(uri, request, req_headers, status, reason, headers, head, raw, body, Timestamp14(ts))


@pytest.fixture
def fetch_factory():
    return make_fetch


def pytest_sessionfinish(session, exitstatus):
    """Audit every WARC file any test wrote under the pytest temp root."""
    from warc_audit import audit, warc_files_under

    factory = getattr(session.config, "_tmp_path_factory", None)
    if factory is None:
        return
    try:
        root = factory.getbasetemp()
    except Exception:
        return
    files = warc_files_under(root)
    problems = [p for f in files for p in audit(f) if "corrupt" not in str(f)]
    reporter = session.config.pluginmanager.get_plugin("terminalreporter")
    from acceptance_log import RESULTS

    if reporter is not None and RESULTS:
        reporter.ensure_newline()
        reporter.write_sep("=", "acceptance criteria")
        for line in RESULTS:
            reporter.write_line(line)
    if reporter is not None:
        reporter.ensure_newline()
        reporter.write_line(f"WARC audit: {len(files)} files written by the suite, {len(problems)} problems")
        for p in problems:
            reporter.write_line("  " + p)
    if problems:
        session.exitstatus = 1
