"""Local stand-in for the onion network: synthetic sites, a stub SOCKS5 proxy and scenarios."""
from .fixtures import ListHistory, fifteen_month_fixture, make_history, twenty_four_month_fixture
from .network import NetworkHandle, PortExhausted, StubSocksProxy, start_network
from .scenario import Scenario, ScenarioReport, ScriptError, load_scenario, run_scenario
from .sites import SimPage, SimSite, SiteServer, generate_site, random_onion

__all__ = [
    "ListHistory", "fifteen_month_fixture", "make_history", "twenty_four_month_fixture",
    "NetworkHandle", "PortExhausted", "StubSocksProxy", "start_network",
    "Scenario", "ScenarioReport", "ScriptError", "load_scenario", "run_scenario",
    "SimPage", "SimSite", "SiteServer", "generate_site", "random_onion",
]
