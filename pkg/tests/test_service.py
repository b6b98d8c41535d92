import json
import os
import random
import signal
import socket
import subprocess
import sys
import urllib.error
import urllib.request

import jsonschema
import pytest

from onionarchive import service
from onionarchive.canonicalizer import Canonicalizer, Observation, UnknownUri
from onionarchive.service import (
    LOG_NAME,
    BindFailure,
    CanonClient,
    CanonStore,
    CanonUnavailable,
    CorruptLog,
    LogEntry,
    ObservationLog,
    OutcomeMismatch,
    replay_log,
)

from conftest import ONION_A, ONION_B, ONION_C
from oracles import random_log

TS = {"type": "string", "pattern": r"^\d{14}$"}
SCHEMAS = {
    "current": {"type": "object", "required": ["site_id", "current_uri"],
                "properties": {"site_id": {"type": "string"}, "current_uri": {"type": "string"}}},
    "timeline": {
        "type": "object", "required": ["site_id", "aliases", "timeline"],
        "properties": {
            "site_id": {"type": "string"},
            "aliases": {"type": "array", "minItems": 1, "items": {
                "type": "object", "required": ["source", "alias"],
                "properties": {"source": {"type": "string"}, "alias": {"type": "string"}}}},
            "timeline": {"type": "array", "minItems": 1, "items": {
                "type": "object", "required": ["uri", "first_seen", "last_seen"],
                "properties": {"uri": {"type": "string"}, "first_seen": TS, "last_seen": TS}}},
        },
    },
    "at": {"type": "object", "required": ["site_id", "uri_at"],
           "properties": {"site_id": {"type": "string"}, "uri_at": {"type": "string"}}},
    "observe": {"type": "object", "required": ["outcome"],
                "properties": {"outcome": {"enum": ["known", "new_site", "shift", "collision"]}}},
    "pending": {"type": "object", "required": ["pending"], "properties": {"pending": {"type": "array"}}},
    "resolve": {"type": "object", "required": ["collision_id", "site_id", "status"]},
}


def get(base, path):
    try:
        with urllib.request.urlopen(base + path, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def post(base, path, body, raw=None):
    data = raw if raw is not None else json.dumps(body).encode()
    req = urllib.request.Request(base + path, data=data, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def o(onion, alias="Site", t="20200101000000", source="list"):
    return Observation(f"http://{onion}/", source, alias, t)


@pytest.fixture
def svc(tmp_path):
    s = service.serve(tmp_path / "canon")
    yield s
    s.close()


def test_query_endpoints(svc):
    c = CanonClient(svc.url)
    assert c.observe(o(ONION_A))["outcome"] == "new_site"
    assert c.observe(o(ONION_B, t="20200201000000"))["outcome"] == "shift"
    status, body = get(svc.url, f"/api/v1/current?uri=http://{ONION_A}/")
    assert status == 200 and body == {"site_id": "site-000001", "current_uri": f"http://{ONION_B}/"}
    status, body = get(svc.url, f"/api/v1/at?uri=http://{ONION_B}/&timestamp=20200115000000&ignored=1")
    assert body["uri_at"] == f"http://{ONION_A}/"
    status, body = get(svc.url, f"/api/v1/timeline?uri=http://{ONION_B}/")
    assert [e["uri"] for e in body["timeline"]] == [f"http://{ONION_A}/", f"http://{ONION_B}/"]
    for name, path in [("current", f"/api/v1/current?uri=http://{ONION_A}/"),
                       ("timeline", f"/api/v1/timeline?uri=http://{ONION_A}/"),
                       ("at", f"/api/v1/at?uri=http://{ONION_A}/&timestamp=20200101000000"),
                       ("pending", "/api/v1/pending")]:
        status, body = get(svc.url, path)
        assert status == 200
        jsonschema.validate(body, SCHEMAS[name])


def test_error_bodies(svc):
    status, body = get(svc.url, f"/api/v1/current?uri=http://{ONION_C}/")
    assert status == 404 and body["error"] == "unknown_uri"
    assert get(svc.url, "/api/v1/current")[0] == 400
    assert get(svc.url, f"/api/v1/at?uri=http://{ONION_C}/&timestamp=nope")[0] == 400
    assert post(svc.url, "/api/v1/observe", None, raw=b"{not json")[0] == 400
    assert post(svc.url, "/api/v1/observe", {"uri": "http://example.com/", "source": "s",
                                             "alias": "a", "observed_at": "20200101000000"})[0] == 400
    post(svc.url, "/api/v1/observe", o(ONION_A, t="20200301000000").to_json())
    status, body = post(svc.url, "/api/v1/observe", o(ONION_A, t="20200101000000").to_json())
    assert status == 409 and body["error"] == "out_of_order"
    status, body = post(svc.url, "/api/v1/collisions/collision-000042/resolve", {"decision": "new_site"})
    assert status == 404 and body["error"] == "unknown_collision"
    assert post(svc.url, "/api/v1/collisions/x/resolve", {"decision": "merge_into"})[0] == 400
    assert get(svc.url, "/api/v2/nothing")[0] == 404


def test_collision_workflow_over_http(svc):
    c = CanonClient(svc.url)
    c.observe(o(ONION_A, "Alpha"))
    result = c.observe(o(ONION_B, "Alpha", "20200102000000", source="wiki"))
    jsonschema.validate(result, SCHEMAS["observe"])
    assert result["outcome"] == "collision"
    pending = c.pending()
    assert [p["collision_id"] for p in pending] == [result["collision_id"]]
    body = c.resolve(result["collision_id"], "merge_into", "site-000001")
    jsonschema.validate(body, SCHEMAS["resolve"])
    assert body["status"] == "resolved_merge"
    assert c.pending() == []
    status, body = post(svc.url, f"/api/v1/collisions/{result['collision_id']}/resolve", {"decision": "new_site"})
    assert status == 409 and body["error"] == "already_resolved"


def test_client_maps_errors(svc):
    c = CanonClient(svc.url)
    with pytest.raises(UnknownUri):
        c.current_uri(f"http://{ONION_C}/")
    with pytest.raises(CanonUnavailable):
        CanonClient("http://127.0.0.1:9", timeout=1).current_uri(f"http://{ONION_C}/")


def test_restart_gives_identical_answers(tmp_path):
    data = tmp_path / "canon"
    store = CanonStore(data)
    for step in random_log(random.Random(11), max_sites=8, max_obs=60, p_resolve=0):
        try:
            store.observe(Observation(*step[1:]))
        except Exception:
            pass
    before = store.engine.state()
    store.close()
    again = CanonStore(data)
    assert again.engine.state() == before
    again.close()


def test_empty_log_gives_empty_engine(tmp_path):
    assert replay_log([]).state() == Canonicalizer().state()
    store = CanonStore(tmp_path)
    assert store.engine.sites() == []
    store.close()


def _write_log(tmp_path, n=5):
    store = CanonStore(tmp_path)
    for i in range(n):
        store.observe(o(ONION_A if i % 2 == 0 else ONION_B, f"s{i % 2}", f"2020010{i + 1}000000"))
    store.close()
    return tmp_path / LOG_NAME


def test_tampered_outcome_detected(tmp_path):
    path = _write_log(tmp_path)
    lines = path.read_text().splitlines()
    entry = json.loads(lines[2])
    entry["outcome"] = {"outcome": "new_site", "site_id": "site-000099"}
    lines[2] = json.dumps(entry)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(OutcomeMismatch) as exc:
        CanonStore(tmp_path)
    assert exc.value.sequence_no == 3


def test_gap_in_sequence_detected(tmp_path):
    path = _write_log(tmp_path)
    lines = path.read_text().splitlines()
    del lines[1]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptLog) as exc:
        CanonStore(tmp_path)
    assert exc.value.sequence_no == 3


def test_garbage_line_detected(tmp_path):
    path = _write_log(tmp_path)
    lines = path.read_text().splitlines()
    lines[1] = "{garbage"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptLog):
        CanonStore(tmp_path)


def test_torn_tail_is_discarded(tmp_path):
    path = _write_log(tmp_path)
    with open(path, "ab") as fh:
        fh.write(b'{"seq": 6, "kind": "obs')
    store = CanonStore(tmp_path)
    assert store.log.last_seq == 5
    store.observe(o(ONION_C, "new", "20200201000000"))
    store.close()
    assert [e.sequence_no for e in ObservationLog(path).entries()] == [1, 2, 3, 4, 5, 6]


def test_log_entry_round_trip():
    e = LogEntry(1, "resolve", {"site_id": "site-000002"}, collision_id="c", decision="new_site")
    assert LogEntry.from_json(e.to_json()) == e
    with pytest.raises(ValueError):
        LogEntry.from_json({"seq": 1, "kind": "nope", "outcome": {}})


def test_bind_failure(svc):
    host, port = svc.address
    with pytest.raises(BindFailure):
        service.CanonService(CanonStore(svc.store.data_dir / "other"), host, port)


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _start_cli_service(data_dir, port):
    proc = subprocess.Popen(
        [sys.executable, "-m", "onionarchive", "canon", "serve", "--data-dir", str(data_dir), "--port", str(port)],
        stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
    )
    buf = b""
    while True:
        line = proc.stdout.readline()
        assert line, "service exited before announcing itself"
        buf += line
        if line.startswith(b"}"):
            break
    assert json.loads(buf)["service"] == "canon"
    return proc


def test_sigkill_restart_preserves_answers(tmp_path):
    port = _free_port()
    base = f"http://127.0.0.1:{port}"
    proc = _start_cli_service(tmp_path, port)
    try:
        c = CanonClient(base)
        c.observe(o(ONION_A, "A"))
        c.observe(o(ONION_B, "A", "20200201000000"))
        c.observe(o(ONION_C, "C", "20200202000000"))
        answers = (c.current_uri(f"http://{ONION_A}/"), c.timeline_for(f"http://{ONION_A}/"),
                   c.uri_at(f"http://{ONION_B}/", "20200105000000"))
    finally:
        os.kill(proc.pid, signal.SIGKILL)
        proc.wait()
    proc = _start_cli_service(tmp_path, port)
    try:
        c = CanonClient(base)
        assert (c.current_uri(f"http://{ONION_A}/"), c.timeline_for(f"http://{ONION_A}/"),
                c.uri_at(f"http://{ONION_B}/", "20200105000000")) == answers
    finally:
        proc.terminate()
        proc.wait()


def test_concurrent_reads_during_writes(svc):
    import threading

    c = CanonClient(svc.url)
    c.observe(o(ONION_A, "A"))
    errors = []

    def reader():
        for _ in range(30):
            try:
                c.timeline_for(f"http://{ONION_A}/")
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

    threads = [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for i in range(30):
        c.observe(o(ONION_A, "A", f"202002{i // 24 + 1:02d}{i % 24:02d}0000"))
    for t in threads:
        t.join()
    assert not errors
