import json
import socket

import pytest

from onionarchive.sim import load_scenario, run_scenario
from onionarchive.sim.scenario import CHECKS, Scenario, ScriptError
from onionarchive.sim.sites import SimPage, SimSite, generate_site

from conftest import ONION_A, ONION_B, SCENARIOS

SMALL = {
    "name": "small",
    "start": "20240101000000",
    "sites": [{"name": "s", "pages": 12, "seed": 2,
               "eras": [{"active_from": "20240101000000"}, {"active_from": "20240110000000"}]}],
    "script": [
        {"action": "ingest", "sites": ["s"], "source": "d"},
        {"action": "crawl", "id": "c1", "sites": ["s"], "max_depth": 3, "delay_ms": 200},
        {"action": "shift", "site": "s", "source": "d"},
        {"action": "advance", "days": 12},
        {"action": "crawl", "id": "c2", "sites": ["s"], "seed_era": 0, "max_depth": 3},
        {"action": "query", "id": "q", "kind": "timeline", "site": "s", "era": 0},
        {"action": "assert", "check": "captured_all", "crawl": "c1", "site": "s"},
        {"action": "assert", "check": "captured_all", "crawl": "c2", "site": "s"},
        {"action": "assert", "check": "post_shift_captures_era", "crawl": "c2", "site": "s", "era": 1},
        {"action": "assert", "check": "timemap_spans", "site": "s", "uri_era": 0, "eras": [0, 1]},
        {"action": "assert", "check": "resolve_via_era", "site": "s", "uri_era": 1,
         "at": {"site": "s", "era": 1, "offset_s": -3600}, "expect_era": 0},
        {"action": "assert", "check": "replay_identical", "crawl": "c2", "site": "s"},
        {"action": "assert", "check": "politeness"},
        {"action": "assert", "check": "no_out_of_scope"},
        {"action": "assert", "check": "no_local_dns"},
    ],
}


def test_site_validation():
    with pytest.raises(ValueError):
        SimSite("x", {"/": SimPage("/")}, [(ONION_A, "20240101000000"), (ONION_A, "20240201000000")])
    with pytest.raises(ValueError):
        SimSite("x", {"/": SimPage("/")}, [(ONION_A, "20240201000000"), (ONION_B, "20240101000000")])
    with pytest.raises(ValueError):
        SimSite("x", {"/": SimPage("/"), "/lost": SimPage("/lost")}, [(ONION_A, "20240101000000")])


def test_generated_site_is_deterministic_and_connected():
    a = generate_site("n", [(ONION_A, "20240101000000")], n_pages=50, seed=9)
    b = generate_site("n", [(ONION_A, "20240101000000")], n_pages=50, seed=9)
    assert [a.render(p) for p in a.pages] == [b.render(p) for p in b.pages]
    assert a.reachable(3) == set(a.pages)
    assert a.render("/robots.txt")[0] == 404 and a.render("/nope")[0] == 404


def test_small_scenario_passes():
    report = run_scenario(SMALL)
    failed = [a.to_json() for a in report.assertions if not a.passed]
    assert report.passed, failed
    assert report.onion_lookups == 0
    assert report.queries["q"]["timeline"][0]["uri"] != report.queries["q"]["timeline"][1]["uri"]


def test_runs_are_deterministic():
    one, two = run_scenario(SMALL), run_scenario(SMALL)
    assert one.capture_sets() == two.capture_sets()
    assert [a.to_json() for a in one.assertions] == [a.to_json() for a in two.assertions]
    assert [(a["host"], a["reply"]) for a in one.audit] == [(a["host"], a["reply"]) for a in two.audit]


def test_broken_assert_fails():
    bad = json.loads(json.dumps(SMALL))
    bad["script"].append({"action": "assert", "check": "crawl_count", "crawl": "c1", "equals": 1})
    report = run_scenario(bad)
    assert not report.passed
    assert [a.check for a in report.assertions if not a.passed] == ["crawl_count"]


@pytest.mark.parametrize("mutation", [
    {"action": "crawl", "id": "x", "sites": ["ghost"]},
    {"action": "assert", "check": "captured_all", "crawl": "never", "site": "s"},
    {"action": "assert", "check": "no_such_check"},
    {"action": "teleport"},
    {"action": "crawl", "id": "c1", "sites": ["s"]},
])
def test_script_errors(mutation):
    bad = json.loads(json.dumps(SMALL))
    bad["script"].append(mutation)
    with pytest.raises(ScriptError):
        Scenario.from_json(bad)


def test_every_check_is_documented_by_a_bundled_scenario():
    used = set()
    for path in SCENARIOS.glob("*.json"):
        sc = load_scenario(path)
        used |= {a["check"] for a in sc.script if a["action"] == "assert"}
    used |= {a["check"] for a in SMALL["script"] if a["action"] == "assert"}
    assert used <= set(CHECKS)


@pytest.mark.parametrize("name", sorted(p.name for p in SCENARIOS.glob("*.json")))
def test_bundled_scenarios_pass(name, tmp_path):
    report = run_scenario(SCENARIOS / name, tmp_path / "work")
    failed = [a.to_json() for a in report.assertions if not a.passed]
    assert report.passed, failed


def test_local_resolution_of_onions_is_detected():
    from onionarchive.sim.scenario import _count_onion_lookups

    counter = []
    with _count_onion_lookups(counter):
        with pytest.raises(OSError):
            socket.getaddrinfo(ONION_A, 80)
    assert counter == [ONION_A]
