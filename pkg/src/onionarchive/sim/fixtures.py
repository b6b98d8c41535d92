"""Synthetic onion-list histories with a scripted number of URI shifts.

Each history is a series of dated CSV snapshots of one list, the way a
git-tracked directory of onion links evolves: sites are added and removed
over time and a chosen subset moves to a new onion address exactly once.
"""
from __future__ import annotations

import io
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

from ..canonicalizer import Canonicalizer
from ..core import Timestamp14
from ..ingest import Issue, SourceSpec, ingest_history, write_list
from .sites import random_onion

MONTH_S = 30.44 * 86400


@dataclass
class ListHistory:
    name: str
    source: str
    snapshots: List[Tuple[Timestamp14, bytes]]
    sites: int
    shifted: Set[str]
    removed: Set[str] = field(default_factory=set)
    noise_rows: int = 0

    def observations(self, report: Optional[List[Issue]] = None):
        files = [(ts, io.StringIO(data.decode("utf-8"))) for ts, data in self.snapshots]
        return ingest_history(files, SourceSpec(self.source), report)

    def run(self, engine: Optional[Canonicalizer] = None) -> Dict[str, object]:
        """Feed the history through a canonicalizer and summarise the timelines."""
        engine = engine or Canonicalizer()
        report: List[Issue] = []
        outcomes = {}
        for obs in self.observations(report):
            outcome = engine.register_observation(obs).outcome
            outcomes[outcome] = outcomes.get(outcome, 0) + 1
        sites = engine.sites()
        multi = sorted(alias for s in sites if len(s.timeline) > 1 for _, alias in s.aliases)
        return {
            "sites": len(sites),
            "multi_entry": len(multi),
            "fraction": len(multi) / len(sites) if sites else 0.0,
            "shifted_aliases": multi,
            "outcomes": outcomes,
            "skipped_rows": sum(1 for i in report if i.kind == "skipped"),
            "removed": sum(1 for i in report if i.kind == "removed"),
        }

    def write(self, directory) -> List[str]:
        """Write snapshots as ``<timestamp>.csv`` files; returns their paths."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for ts, data in self.snapshots:
            p = d / f"{ts}.csv"
            p.write_bytes(data)
            paths.append(str(p))
        return paths


def make_history(name: str, n_sites: int, n_shifted: int, months: int, n_commits: int,
                 shift_commits: int, seed: int = 0, start: str = "20160101000000",
                 removed_fraction: float = 0.05, initial_fraction: float = 0.7,
                 noise_rows: int = 3) -> ListHistory:
    """Generate a list history where exactly ``n_shifted`` sites change onion once.

    Shifts are spread over ``shift_commits`` distinct commits. Removed sites
    never shift, and removed aliases never come back. ``noise_rows`` surface
    or malformed rows appear in every snapshot and must be skipped.
    """
    if not 0 < shift_commits < n_commits:
        raise ValueError("shift_commits must be between 1 and n_commits - 1")
    if n_shifted > n_sites or (n_shifted and n_shifted < shift_commits):
        raise ValueError("need at least one shifted site per shift commit")
    rng = random.Random(seed)
    t0 = Timestamp14(start)
    span = months * MONTH_S
    times = [t0.shifted(round(i * span / (n_commits - 1))) for i in range(n_commits)]

    aliases = [f"{name}-{i:04d}" for i in range(n_sites)]
    shifted = set(rng.sample(aliases, n_shifted))
    added: Dict[str, int] = {}
    for a in aliases:
        if a in shifted or rng.random() < initial_fraction:
            added[a] = 0
        else:
            added[a] = rng.randrange(1, n_commits)
    removed: Dict[str, int] = {}
    for a in aliases:
        if a not in shifted and added[a] < n_commits - 1 and rng.random() < removed_fraction:
            removed[a] = rng.randrange(added[a] + 1, n_commits)

    shift_at = sorted(rng.sample(range(1, n_commits), shift_commits))
    order = sorted(shifted)
    rng.shuffle(order)
    when: Dict[str, int] = {}
    for i, a in enumerate(order):
        when[a] = shift_at[i] if i < len(shift_at) else rng.choice(shift_at)

    used: Set[str] = set()

    def fresh(v3: bool) -> str:
        while True:
            onion = random_onion(rng, v3)
            if onion not in used:
                used.add(onion)
                return onion

    first = {a: fresh(rng.random() < 0.5) for a in aliases}
    second = {a: fresh(True) for a in order}
    noise = ["www.example.com", "not-an-onion.onion", "abc.onion", "http://UPPER?.onion"][:noise_rows]

    snapshots = []
    for c, ts in enumerate(times):
        rows = []
        for a in aliases:
            if added[a] > c or (a in removed and removed[a] <= c):
                continue
            onion = second[a] if a in when and c >= when[a] else first[a]
            rows.append((a, f"http://{onion}/" if rng.random() < 0.5 else onion))
        rows += [(f"noise-{j}", n) for j, n in enumerate(noise)]
        rng.shuffle(rows)
        buf = io.StringIO()
        write_list(buf, rows)
        snapshots.append((ts, buf.getvalue().encode("utf-8")))
    return ListHistory(name, f"{name}-list", snapshots, n_sites, shifted, set(removed), len(noise))


def fifteen_month_fixture(seed: int = 15) -> ListHistory:
    """128 sites over 15 months, 9 of them shifting across 4 commits."""
    return make_history("nonillicit", 128, 9, months=15, n_commits=20, shift_commits=4, seed=seed)


def twenty_four_month_fixture(seed: int = 24) -> ListHistory:
    """1,365 sites over 24 months, 268 of them shifting across 22 updates."""
    return make_history("catalog", 1365, 268, months=24, n_commits=26, shift_commits=22, seed=seed,
                        start="20170601000000")
