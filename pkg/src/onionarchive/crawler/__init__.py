"""Archival crawler: frontier, scope and robots policy, SOCKS5 fetching."""
from .crawl import (
    Capture,
    CrawlJob,
    Crawler,
    CrawlReport,
    Fetcher,
    FrontierEntry,
    Politeness,
    RobotsCache,
    ScopePolicy,
    StoreFailure,
    crawl,
    in_scope,
    load_job,
    next_target,
)
from .fetch import (
    ConnectFailed,
    FetchError,
    FetchResult,
    HttpFetchEngine,
    ProxyDown,
    RobotsDenied,
    Timeout,
    TooLarge,
    TooManyRedirects,
)
from .links import EMBEDDED, NAVIGATION, extract_links
from .socks import ProxyUnreachable, SocksError, socks5_connect

__all__ = [
    "Capture", "CrawlJob", "Crawler", "CrawlReport", "Fetcher", "FrontierEntry", "Politeness",
    "RobotsCache", "ScopePolicy", "StoreFailure", "crawl", "in_scope", "load_job", "next_target",
    "ConnectFailed", "FetchError", "FetchResult", "HttpFetchEngine", "ProxyDown", "RobotsDenied",
    "Timeout", "TooLarge", "TooManyRedirects", "EMBEDDED", "NAVIGATION", "extract_links",
    "ProxyUnreachable", "SocksError", "socks5_connect",
]
