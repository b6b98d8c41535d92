import json
import os
import subprocess
import sys

import pytest

from onionarchive import cli, service
from onionarchive.clock import SystemClock
from onionarchive.core import Timestamp14
from onionarchive.ingest import write_list
from onionarchive.sim.network import NetworkHandle
from onionarchive.sim.sites import generate_site
from onionarchive.warc import WarcStore

from conftest import ONION_A, ONION_B, SCENARIOS, make_fetch


def run(*args, env=None, timeout=120):
    proc = subprocess.run([sys.executable, "-m", "onionarchive", *args], capture_output=True, text=True,
                          timeout=timeout, env={**os.environ, **(env or {})})
    return proc.returncode, proc.stdout, proc.stderr


@pytest.fixture
def canon(tmp_path):
    svc = service.serve(tmp_path / "canon")
    yield svc
    svc.close()


def test_no_arguments_is_usage_error():
    code, out, err = run()
    assert code == 2 and out == "" and "usage:" in err


def test_group_without_subcommand_prints_its_help():
    code, _, err = run("warc")
    assert code == 2 and "verify" in err


def test_bad_flag_is_usage_error():
    assert run("query", "current")[0] == 2
    assert run("query", "current", "--uri", "x", "--canon", "ftp://nowhere")[0] == 2


def test_ingest_then_query(canon, tmp_path):
    lst = tmp_path / "list.csv"
    write_list(lst, [("Buzzfeed News", "https://bfnews3u2ox4m4ty.onion"), ("junk", "example.com")])
    code, out, _ = run("ingest", str(lst), "--source", "github", "--observed-at", "20240101000000",
                       "--canon", canon.url)
    body = json.loads(out)
    assert code == 0 and body["outcomes"] == {"new_site": 1} and len(body["issues"]) == 1
    code, out, _ = run("query", "current", "--uri", "http://bfnews3u2ox4m4ty.onion",
                       env={"ONIONARCHIVE_CANON": canon.url})
    assert code == 0
    assert json.loads(out) == {"uri": "http://bfnews3u2ox4m4ty.onion/", "site_id": "site-000001",
                               "current_uri": "https://bfnews3u2ox4m4ty.onion/"}
    code, out, _ = run("query", "at", "--uri", "http://bfnews3u2ox4m4ty.onion", "--timestamp", "20240101000000",
                       "--canon", canon.url)
    assert code == 0 and json.loads(out)["uri_at"] == "https://bfnews3u2ox4m4ty.onion/"
    code, out, _ = run("query", "timeline", "--uri", "http://bfnews3u2ox4m4ty.onion", "--canon", canon.url)
    assert code == 0 and json.loads(out)["aliases"] == [{"source": "github", "alias": "Buzzfeed News"}]


def test_history_ingest_and_collisions(canon, tmp_path):
    hist = tmp_path / "hist"
    hist.mkdir()
    write_list(hist / "20240101000000.csv", [("A", ONION_A)])
    write_list(hist / "20240201000000.csv", [("A", ONION_B)])
    code, out, _ = run("ingest", str(hist), "--history", "--source", "git", "--canon", canon.url)
    assert code == 0 and json.loads(out)["outcomes"] == {"new_site": 1, "shift": 1}
    other = tmp_path / "other.csv"
    write_list(other, [("A", ONION_A)])
    code, out, _ = run("ingest", str(other), "--source", "wiki", "--observed-at", "20240301000000",
                       "--canon", canon.url)
    assert json.loads(out)["outcomes"] == {"collision": 1}
    code, out, _ = run("collisions", "list", "--canon", canon.url)
    (pending,) = json.loads(out)["pending"]
    code, out, _ = run("collisions", "resolve", pending["collision_id"], "--decision", "new_site",
                       "--canon", canon.url)
    assert code == 0 and json.loads(out)["status"] == "resolved_new_site"
    code, _, err = run("collisions", "resolve", pending["collision_id"], "--decision", "new_site",
                       "--canon", canon.url)
    assert code == 1 and "AlreadyResolved" in err


def test_unknown_uri_and_unreachable_service_are_operational_errors(canon):
    code, out, err = run("query", "current", "--uri", f"http://{ONION_A}", "--canon", canon.url)
    assert code == 1 and out == "" and json.loads(err)["error"] == "UnknownUri"
    code, _, err = run("query", "current", "--uri", f"http://{ONION_A}", "--canon", "http://127.0.0.1:9",
                       "--timeout", "1")
    assert code == 1 and json.loads(err)["error"] == "CanonUnavailable"


def _warc(tmp_path):
    store = WarcStore(tmp_path / "w", job_id="cli")
    for i in range(3):
        store.write_capture(make_fetch(f"http://{ONION_A}/{i}", ts=f"2024010100000{i}"),
                            first_observed_uri=f"http://{ONION_A}/")
    store.close()
    return store.files[0]


def test_warc_verify_and_index(tmp_path):
    path = _warc(tmp_path)
    code, out, _ = run("warc", "verify", str(path))
    body = json.loads(out)
    assert code == 0 and body["ok"] and body["records"] == 1 + 3 * 3
    code, out, _ = run("warc", "index", str(path), "-o", str(tmp_path / "i.cdx"))
    assert code == 0 and json.loads(out)["entries"] == 3
    broken = tmp_path / "corrupt" / "b.warc"
    broken.parent.mkdir()
    broken.write_bytes(path.read_bytes()[:-7])
    code, out, _ = run("warc", "verify", str(broken))
    assert code == 1 and not json.loads(out)["ok"]


def test_crawl_job_through_cli(tmp_path, canon):
    site = generate_site("cli", [(ONION_A, "20000101000000")], n_pages=8, seed=5)
    with NetworkHandle([site], SystemClock()) as net:
        job = {"seeds": [f"http://{ONION_A}/"], "proxy": list(net.proxy_address), "delay_ms": 0,
               "max_depth": 3, "job_id": "clijob", "output_dir": str(tmp_path / "out"), "timeout_s": 5}
        jobfile = tmp_path / "job.json"
        jobfile.write_text(json.dumps(job))
        code, out, err = run("crawl", str(jobfile), "--canon", canon.url)
    report = json.loads(out)
    assert code == 0, err
    assert report["captured"] == len(site.pages) + len(site.resources()) and report["errors"] == 0
    assert {c["first_observed_uri"] for c in report["captures"]} == {f"http://{ONION_A}/"}
    assert any(f.endswith(".warc") for f in os.listdir(tmp_path / "out"))


def test_scenario_run_exit_codes(tmp_path):
    code, out, _ = run("scenario", "run", str(SCENARIOS / "shift.json"), timeout=300)
    assert code == 0 and json.loads(out)["passed"]
    broken = json.loads((SCENARIOS / "shift.json").read_text())
    broken["script"].append({"action": "assert", "check": "crawl_count", "crawl": "before", "equals": 0})
    p = tmp_path / "broken.json"
    p.write_text(json.dumps(broken))
    code, out, _ = run("scenario", "run", str(p), timeout=300)
    assert code == 1 and not json.loads(out)["passed"]
    broken["script"].append({"action": "crawl", "id": "z", "sites": ["nobody"]})
    p.write_text(json.dumps(broken))
    code, _, err = run("scenario", "run", str(p))
    assert code == 2 and "ScriptError" in err


def test_main_in_process_returns_codes(capsys):
    assert cli.main([]) == 2
    assert cli.main(["warc", "verify", "/nonexistent.warc"]) == 1
    assert json.loads(capsys.readouterr().out)["ok"] is False
    assert Timestamp14("20240101000000")  # imported API stays importable
