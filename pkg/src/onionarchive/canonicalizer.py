"""Onion canonicalizer engine.

Tracks ``(uri, source, alias, observed_at)`` observations of onion sites and
keeps, per site, a timeline of the onion addresses the site has used. The
engine is a single-writer structure; every public method takes the same
re-entrant lock so readers always see a state between two writes.

Identity resolution for a new observation, in order:

1. its onion is the *current* address of a site -> ``Known`` (alias merged)
2. onion unknown, exact ``(source, alias)`` pair owned by one site -> ``Shift``
3. onion unknown and pair unknown -> ``NewSite``
4. anything ambiguous (onion is a retired address, pair owned by a different
   site than the onion, alias reused under another source) -> ``Collision``,
   held for an administrator and applied only through ``resolve_collision``.
"""
from __future__ import annotations

import bisect
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple, Union

from .core import CanonicalUri, NotOnion, OnionAddress, Timestamp14, UriError, canonicalize_uri

Pair = Tuple[str, str]


class CanonError(Exception):
    code = "canon_error"


class OutOfOrderObservation(CanonError):
    code = "out_of_order"


class UnknownUri(CanonError, KeyError):
    code = "unknown_uri"

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else self.code


class UnknownCollision(CanonError, KeyError):
    code = "unknown_collision"

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else self.code


class UnknownSite(CanonError, KeyError):
    code = "unknown_site"

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else self.code


class AlreadyResolved(CanonError):
    code = "already_resolved"


class AliasConflict(CanonError):
    code = "alias_conflict"


@dataclass(frozen=True)
class Observation:
    uri: CanonicalUri
    source: str
    alias: str
    observed_at: Timestamp14

    def __post_init__(self):
        uri = canonicalize_uri(self.uri)
        if uri.onion is None:
            raise NotOnion(uri.host)
        object.__setattr__(self, "uri", uri.root())
        object.__setattr__(self, "observed_at", Timestamp14(self.observed_at))
        if not self.source or not self.alias:
            raise ValueError("observation source and alias must be non-empty")

    @property
    def pair(self) -> Pair:
        return (self.source, self.alias)

    def to_json(self) -> dict:
        return {
            "uri": str(self.uri),
            "source": self.source,
            "alias": self.alias,
            "observed_at": str(self.observed_at),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Observation":
        return cls(data["uri"], data["source"], data["alias"], data["observed_at"])


@dataclass(frozen=True)
class TimelineEntry:
    uri: CanonicalUri
    first_seen: Timestamp14
    last_seen: Timestamp14

    def to_json(self) -> dict:
        return {"uri": str(self.uri), "first_seen": self.first_seen, "last_seen": self.last_seen}


UriTimeline = Tuple[TimelineEntry, ...]


@dataclass(frozen=True)
class SiteRecord:
    site_id: str
    aliases: frozenset
    timeline: UriTimeline

    @property
    def current(self) -> CanonicalUri:
        return self.timeline[-1].uri

    def to_json(self) -> dict:
        return {
            "site_id": self.site_id,
            "aliases": [{"source": s, "alias": a} for s, a in sorted(self.aliases)],
            "timeline": [e.to_json() for e in self.timeline],
        }


@dataclass(frozen=True)
class ShiftEvent:
    site_id: str
    from_uri: CanonicalUri
    to_uri: CanonicalUri
    shifted_at: Timestamp14


@dataclass
class PendingCollision:
    collision_id: str
    observation: Observation
    candidate_sites: frozenset
    raised_at: Timestamp14
    status: str = "pending"
    resolved_site: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "collision_id": self.collision_id,
            "observation": self.observation.to_json(),
            "candidate_sites": sorted(self.candidate_sites),
            "raised_at": self.raised_at,
            "status": self.status,
            "resolved_site": self.resolved_site,
        }


# register_observation results


@dataclass(frozen=True)
class Known:
    site_id: str
    outcome = "known"

    def to_json(self) -> dict:
        return {"outcome": self.outcome, "site_id": self.site_id}


@dataclass(frozen=True)
class NewSite:
    site_id: str
    outcome = "new_site"

    def to_json(self) -> dict:
        return {"outcome": self.outcome, "site_id": self.site_id}


@dataclass(frozen=True)
class Shift:
    event: ShiftEvent
    outcome = "shift"

    @property
    def site_id(self) -> str:
        return self.event.site_id

    def to_json(self) -> dict:
        e = self.event
        return {
            "outcome": self.outcome,
            "site_id": e.site_id,
            "from_uri": str(e.from_uri),
            "to_uri": str(e.to_uri),
            "shifted_at": e.shifted_at,
        }


@dataclass(frozen=True)
class Collision:
    collision_id: str
    candidate_sites: frozenset = frozenset()
    outcome = "collision"

    def to_json(self) -> dict:
        return {
            "outcome": self.outcome,
            "collision_id": self.collision_id,
            "candidate_sites": sorted(self.candidate_sites),
        }


RegisterResult = Union[Known, NewSite, Shift, Collision]

MERGE_INTO = "merge_into"
NEW_SITE = "new_site"


@dataclass
class _Site:
    site_id: str
    aliases: Set[Pair] = field(default_factory=set)
    entries: List[list] = field(default_factory=list)  # [uri, first_seen, last_seen]

    @property
    def latest(self) -> Timestamp14:
        return self.entries[-1][2]

    def record(self) -> SiteRecord:
        return SiteRecord(
            self.site_id,
            frozenset(self.aliases),
            tuple(TimelineEntry(u, f, l) for u, f, l in self.entries),
        )


class Canonicalizer:
    """In-memory onion canonicalizer."""

    def __init__(self):
        self._lock = threading.RLock()
        self._sites: Dict[str, _Site] = {}
        self._current: Dict[OnionAddress, str] = {}
        self._owner: Dict[OnionAddress, str] = {}
        self._pairs: Dict[Pair, str] = {}
        self._aliases: Dict[str, Set[str]] = {}
        self._collisions: Dict[str, PendingCollision] = {}
        self._shifts: List[ShiftEvent] = []
        self._next_site = 1
        self._next_collision = 1

    # -- writes ---------------------------------------------------------

    def register_observation(self, obs: Observation) -> RegisterResult:
        with self._lock:
            onion = obs.uri.onion
            t = obs.observed_at
            cur = self._current.get(onion)
            owner = self._owner.get(onion)
            prior = owner if owner is not None and owner != cur else None
            by_pair = self._pairs.get(obs.pair)
            alias_only = set()
            if by_pair is None:
                alias_only = set(self._aliases.get(obs.alias, ()))

            matching = {s for s in (cur, prior, by_pair) if s is not None} | alias_only
            for sid in matching:
                if t < self._sites[sid].latest:
                    raise OutOfOrderObservation(
                        f"{t} is older than the latest observation of {sid} ({self._sites[sid].latest})"
                    )

            if cur is not None:
                if by_pair is None or by_pair == cur:
                    self._apply_known(self._sites[cur], obs)
                    return Known(cur)
                return self._raise_collision(obs, {cur, by_pair})
            if prior is not None:
                return self._raise_collision(obs, {prior} | alias_only | ({by_pair} - {None}))
            if by_pair is not None:
                if t <= self._sites[by_pair].entries[-1][1]:
                    # first_seen must strictly increase along a timeline
                    raise OutOfOrderObservation(f"shift at {t} does not follow the current era of {by_pair}")
                return Shift(self._apply_shift(self._sites[by_pair], obs))
            if alias_only:
                return self._raise_collision(obs, alias_only)
            return NewSite(self._new_site(obs).site_id)

    def resolve_collision(self, collision_id: str, decision: str, site_id: Optional[str] = None) -> str:
        """Apply an administrator's decision to a held observation.

        ``decision`` is ``"merge_into"`` (with ``site_id``) or ``"new_site"``.
        Returns the site the observation ended up in.
        """
        with self._lock:
            try:
                col = self._collisions[collision_id]
            except KeyError:
                raise UnknownCollision(collision_id) from None
            if col.status != "pending":
                raise AlreadyResolved(collision_id)
            obs = col.observation
            if decision == MERGE_INTO:
                if site_id not in self._sites:
                    raise UnknownSite(site_id)
                site = self._sites[site_id]
                if site.entries[-1][0].onion == obs.uri.onion:
                    self._apply_known(site, obs)
                else:
                    if obs.observed_at <= site.entries[-1][1]:
                        raise OutOfOrderObservation(
                            f"{obs.observed_at} does not follow the current era of {site_id}"
                        )
                    self._claim_pair(site, obs.pair)
                    self._apply_shift(site, obs)
                col.status = "resolved_merge"
            elif decision == NEW_SITE:
                holder = self._pairs.get(obs.pair)
                if holder is not None and len(self._sites[holder].aliases) <= 1:
                    raise AliasConflict(f"{obs.pair} is the only alias of {holder}")
                site = self._new_site(obs)
                col.status = "resolved_new_site"
            else:
                raise ValueError(f"unknown decision {decision!r}")
            col.resolved_site = site.site_id
            return site.site_id

    # -- reads ----------------------------------------------------------

    def current_uri(self, uri) -> Tuple[str, CanonicalUri]:
        with self._lock:
            site = self._site_of(uri)
            return site.site_id, site.entries[-1][0]

    def timeline_for(self, uri) -> UriTimeline:
        with self._lock:
            return self._site_of(uri).record().timeline

    def site_for(self, uri) -> SiteRecord:
        with self._lock:
            return self._site_of(uri).record()

    def uri_at(self, uri, at) -> CanonicalUri:
        at = Timestamp14(at)
        with self._lock:
            entries = self._site_of(uri).entries
            firsts = [e[1] for e in entries]
            idx = max(bisect.bisect_right(firsts, at) - 1, 0)
            return entries[idx][0]

    def list_pending(self) -> List[PendingCollision]:
        with self._lock:
            return [c for c in self._collisions.values() if c.status == "pending"]

    def collision(self, collision_id: str) -> PendingCollision:
        with self._lock:
            try:
                return self._collisions[collision_id]
            except KeyError:
                raise UnknownCollision(collision_id) from None

    def site(self, site_id: str) -> SiteRecord:
        with self._lock:
            try:
                return self._sites[site_id].record()
            except KeyError:
                raise UnknownSite(site_id) from None

    def sites(self) -> List[SiteRecord]:
        with self._lock:
            return [s.record() for s in self._sites.values()]

    def shift_events(self) -> List[ShiftEvent]:
        with self._lock:
            return list(self._shifts)

    def state(self) -> dict:
        """Plain-data view of the whole engine, for equality checks."""
        with self._lock:
            return {
                "sites": {
                    sid: {
                        "aliases": sorted(s.aliases),
                        "timeline": [(str(u), f, l) for u, f, l in s.entries],
                    }
                    for sid, s in self._sites.items()
                },
                "collisions": [
                    (c.collision_id, c.observation.to_json(), sorted(c.candidate_sites), c.status)
                    for c in self._collisions.values()
                ],
                "shifts": [
                    (e.site_id, str(e.from_uri), str(e.to_uri), e.shifted_at) for e in self._shifts
                ],
            }

    # -- internals ------------------------------------------------------

    def _site_of(self, uri) -> _Site:
        try:
            onion = canonicalize_uri(uri).onion
        except (UriError, ValueError):
            raise UnknownUri(str(uri)) from None
        sid = None
        if onion is not None:
            sid = self._current.get(onion) or self._owner.get(onion)
        if sid is None:
            raise UnknownUri(str(uri))
        return self._sites[sid]

    def _new_site(self, obs: Observation) -> _Site:
        sid = f"site-{self._next_site:06d}"
        self._next_site += 1
        site = _Site(sid)
        site.entries.append([obs.uri, obs.observed_at, obs.observed_at])
        self._sites[sid] = site
        self._claim_pair(site, obs.pair)
        self._current[obs.uri.onion] = sid
        self._owner[obs.uri.onion] = sid
        return site

    def _apply_known(self, site: _Site, obs: Observation):
        entry = site.entries[-1]
        if obs.observed_at > entry[2]:
            entry[2] = obs.observed_at
        self._claim_pair(site, obs.pair)

    def _apply_shift(self, site: _Site, obs: Observation) -> ShiftEvent:
        old = site.entries[-1][0]
        if old.onion in self._current and self._current[old.onion] == site.site_id:
            del self._current[old.onion]
        site.entries.append([obs.uri, obs.observed_at, obs.observed_at])
        self._current[obs.uri.onion] = site.site_id
        self._owner[obs.uri.onion] = site.site_id
        event = ShiftEvent(site.site_id, old, obs.uri, obs.observed_at)
        self._shifts.append(event)
        return event

    def _claim_pair(self, site: _Site, pair: Pair):
        holder = self._pairs.get(pair)
        if holder == site.site_id:
            return
        if holder is not None:
            other = self._sites[holder]
            if len(other.aliases) <= 1:
                return
            other.aliases.discard(pair)
            self._aliases[pair[1]].discard(holder)
        site.aliases.add(pair)
        self._pairs[pair] = site.site_id
        self._aliases.setdefault(pair[1], set()).add(site.site_id)

    def _raise_collision(self, obs: Observation, candidates: Iterable[str]) -> Collision:
        cid = f"collision-{self._next_collision:06d}"
        self._next_collision += 1
        cands = frozenset(candidates)
        self._collisions[cid] = PendingCollision(cid, obs, cands, obs.observed_at)
        return Collision(cid, cands)


def result_from_json(data: dict) -> dict:
    """Normalize a serialized result for comparison (drops unknown keys)."""
    keys = {
        "known": ("outcome", "site_id"),
        "new_site": ("outcome", "site_id"),
        "shift": ("outcome", "site_id", "from_uri", "to_uri", "shifted_at"),
        "collision": ("outcome", "collision_id", "candidate_sites"),
    }[data["outcome"]]
    return {k: data.get(k) for k in keys}
