"""Brute-force reference implementations used to check the real ones.

Nothing here shares code with the package beyond plain types: the
canonicalizer oracle keeps flat lists and rescans them on every call, and the
replay oracle scans every CDX line.
"""
from __future__ import annotations

import random
from datetime import datetime, timedelta, timezone

from onionarchive.canonicalizer import (
    AliasConflict,
    AlreadyResolved,
    Canonicalizer,
    Observation,
    OutOfOrderObservation,
    UnknownCollision,
    UnknownSite,
)
from onionarchive.core import canonicalize_uri


def _onion(uri):
    host = canonicalize_uri(uri).host
    return ".".join(host.split(".")[-2:])


class OracleCanonicalizer:
    """Sequential reference: state is a list of sites plus a list of onion claims."""

    def __init__(self):
        self.sites = []  # dicts: id, aliases(list), timeline(list of [uri, first, last])
        self.claims = []  # (onion, site_id) in claim order
        self.collisions = []  # dicts
        self.shifts = []

    # -- scans ---------------------------------------------------------
    def _site(self, sid):
        for s in self.sites:
            if s["id"] == sid:
                return s
        return None

    def _owner(self, onion):
        for o, sid in reversed(self.claims):
            if o == onion:
                return sid
        return None

    def _holder(self, pair):
        for s in self.sites:
            if pair in s["aliases"]:
                return s["id"]
        return None

    def _alias_sites(self, alias):
        return {s["id"] for s in self.sites if any(a == alias for _, a in s["aliases"])}

    # -- mutations -----------------------------------------------------
    def _claim_pair(self, site, pair):
        holder = self._holder(pair)
        if holder == site["id"]:
            return
        if holder is not None:
            other = self._site(holder)
            if len(other["aliases"]) <= 1:
                return
            other["aliases"].remove(pair)
        site["aliases"].append(pair)

    def _new_site(self, uri, t, pair):
        sid = "site-%06d" % (len(self.sites) + 1)
        site = {"id": sid, "aliases": [], "timeline": [[uri, t, t]]}
        self.sites.append(site)
        self._claim_pair(site, pair)
        self.claims.append((_onion(uri), sid))
        return sid

    def _known(self, site, t, pair):
        last = site["timeline"][-1]
        last[2] = max(last[2], t)
        self._claim_pair(site, pair)

    def _shift(self, site, uri, t):
        old = site["timeline"][-1][0]
        site["timeline"].append([uri, t, t])
        self.claims.append((_onion(uri), site["id"]))
        self.shifts.append((site["id"], old, uri, t))

    def _collide(self, obs, candidates):
        cid = "collision-%06d" % (len(self.collisions) + 1)
        cands = sorted(c for c in candidates if c is not None)
        self.collisions.append({"id": cid, "obs": obs, "cands": cands, "status": "pending"})
        return {"outcome": "collision", "collision_id": cid, "candidate_sites": cands}

    # -- API -----------------------------------------------------------
    def register(self, uri, source, alias, t):
        uri = str(canonicalize_uri(uri).root())
        onion = _onion(uri)
        pair = (source, alias)
        owner = self._owner(onion)
        cur = owner if owner is not None and _onion(self._site(owner)["timeline"][-1][0]) == onion else None
        prior = owner if owner is not None and owner != cur else None
        by_pair = self._holder(pair)
        alias_only = self._alias_sites(alias) if by_pair is None else set()

        for sid in ({cur, prior, by_pair} - {None}) | alias_only:
            if t < self._site(sid)["timeline"][-1][2]:
                raise OutOfOrderObservation(sid)
        obs = (uri, source, alias, t)
        if cur is not None:
            if by_pair in (None, cur):
                self._known(self._site(cur), t, pair)
                return {"outcome": "known", "site_id": cur}
            return self._collide(obs, {cur, by_pair})
        if prior is not None:
            return self._collide(obs, {prior, by_pair} | alias_only)
        if by_pair is not None:
            site = self._site(by_pair)
            if t <= site["timeline"][-1][1]:
                raise OutOfOrderObservation(by_pair)
            old = site["timeline"][-1][0]
            self._shift(site, uri, t)
            return {"outcome": "shift", "site_id": by_pair, "from_uri": old, "to_uri": uri, "shifted_at": t}
        if alias_only:
            return self._collide(obs, alias_only)
        return {"outcome": "new_site", "site_id": self._new_site(uri, t, pair)}

    def resolve(self, cid, decision, site_id=None):
        col = next((c for c in self.collisions if c["id"] == cid), None)
        if col is None:
            raise UnknownCollision(cid)
        if col["status"] != "pending":
            raise AlreadyResolved(cid)
        uri, source, alias, t = col["obs"]
        pair = (source, alias)
        if decision == "merge_into":
            site = self._site(site_id)
            if site is None:
                raise UnknownSite(site_id)
            if _onion(site["timeline"][-1][0]) == _onion(uri):
                self._known(site, t, pair)
            else:
                if t <= site["timeline"][-1][1]:
                    raise OutOfOrderObservation(site_id)
                self._claim_pair(site, pair)
                self._shift(site, uri, t)
            col["status"] = "resolved_merge"
            return site_id
        holder = self._holder(pair)
        if holder is not None and len(self._site(holder)["aliases"]) <= 1:
            raise AliasConflict(cid)
        sid = self._new_site(uri, t, pair)
        col["status"] = "resolved_new_site"
        return sid

    def current(self, uri):
        sid = self._owner(_onion(uri))
        if sid is None:
            return None
        return sid, self._site(sid)["timeline"][-1][0]

    def uri_at(self, uri, t):
        sid = self._owner(_onion(uri))
        if sid is None:
            return None
        timeline = self._site(sid)["timeline"]
        chosen = timeline[0][0]
        for u, first, _ in timeline:
            if first <= t:
                chosen = u
        return chosen

    def state(self):
        return {
            "sites": {
                s["id"]: {"aliases": sorted(s["aliases"]), "timeline": [tuple(e) for e in s["timeline"]]}
                for s in self.sites
            },
            "collisions": [
                (c["id"], {"uri": c["obs"][0], "source": c["obs"][1], "alias": c["obs"][2], "observed_at": c["obs"][3]},
                 c["cands"], c["status"])
                for c in self.collisions
            ],
            "shifts": list(self.shifts),
        }


def normalize_state(state):
    """Make an engine ``state()`` comparable with the oracle's."""
    return {
        "sites": {sid: {"aliases": [tuple(a) for a in s["aliases"]],
                        "timeline": [(str(u), str(f), str(l)) for u, f, l in s["timeline"]]}
                  for sid, s in state["sites"].items()},
        "collisions": [(cid, {k: str(v) for k, v in obs.items()}, list(c), st)
                       for cid, obs, c, st in state["collisions"]],
        "shifts": [tuple(str(x) for x in e) for e in state["shifts"]],
    }


# --- random observation logs ------------------------------------------------

_B32 = "abcdefghijklmnopqrstuvwxyz234567"


def _rand_onion(rng):
    return "".join(rng.choice(_B32) for _ in range(16)) + ".onion"


def _ts(base, seconds):
    return (base + timedelta(seconds=seconds)).strftime("%Y%m%d%H%M%S")


def random_log(rng: random.Random, max_sites=50, max_obs=200, p_shift=0.1, p_collision=0.08, p_resolve=0.05):
    """A random operation log: ``("observe", uri, source, alias, ts)`` and
    ``("resolve", index_of_collision, decision, site_hint)`` steps.

    Time mostly moves forward, sometimes repeats or steps back so that the
    out-of-order path is exercised too.
    """
    base = datetime(2020, 1, 1, tzinfo=timezone.utc)
    n_sites = rng.randint(1, max_sites)
    sources = ["dir-a", "dir-b", "dir-c"]
    sites = []
    used = set()
    for i in range(n_sites):
        onion = _rand_onion(rng)
        used.add(onion)
        sites.append({"pair": (rng.choice(sources), f"alias-{i}"), "onions": [onion]})
    clock = 0
    steps = []
    n = rng.randint(1, max_obs)
    for _ in range(n):
        r = rng.random()
        clock += rng.choice([0, 1, 60, 3600, 86400])
        if rng.random() < 0.02:
            clock = max(0, clock - rng.randint(1, 86400))
        site = rng.choice(sites)
        if r < p_resolve:
            steps.append(("resolve", rng.randrange(1000), rng.choice(["merge_into", "new_site"]),
                          rng.randrange(1, n_sites + 3)))
            continue
        r = rng.random()
        uri = "http://" + site["onions"][-1] + "/"
        source, alias = site["pair"]
        if r < p_shift:
            onion = _rand_onion(rng)
            while onion in used:
                onion = _rand_onion(rng)
            used.add(onion)
            site["onions"].append(onion)
            uri = "http://" + onion + "/"
        elif r < p_shift + p_collision:
            kind = rng.randrange(4)
            other = rng.choice(sites)
            if kind == 0 and len(site["onions"]) > 1:
                uri = "http://" + rng.choice(site["onions"][:-1]) + "/"  # retired address
            elif kind == 1:
                source = rng.choice(sources)  # alias under another source
            elif kind == 2:
                uri = "http://" + other["onions"][-1] + "/"  # someone else's onion
            else:
                alias = other["pair"][1]
        if rng.random() < 0.2:
            uri = uri.replace("http://", "http://www.").rstrip("/") + "/page?x=1"
        steps.append(("observe", uri, source, alias, _ts(base, clock)))
    return steps


def apply_steps(steps, engine_call, resolve_call, collisions_of):
    """Run ``steps`` against one implementation; returns per-step outcomes."""
    out = []
    for step in steps:
        if step[0] == "observe":
            _, uri, source, alias, ts = step
            try:
                out.append(engine_call(uri, source, alias, ts))
            except OutOfOrderObservation:
                out.append("out_of_order")
        else:
            _, idx, decision, hint = step
            cids = collisions_of()
            if not cids:
                out.append("no_collision")
                continue
            cid = cids[idx % len(cids)]
            try:
                out.append(("resolved", resolve_call(cid, decision, "site-%06d" % hint)))
            except (OutOfOrderObservation, AlreadyResolved, UnknownSite, AliasConflict, UnknownCollision) as exc:
                out.append(type(exc).__name__)
    return out


def run_engine(steps):
    eng = Canonicalizer()
    outcomes = apply_steps(
        steps,
        lambda u, s, a, t: eng.register_observation(Observation(u, s, a, t)).to_json(),
        lambda c, d, s: eng.resolve_collision(c, d, s),
        lambda: [c.collision_id for c in eng.list_pending()],
    )
    return eng, outcomes


def run_oracle(steps):
    orc = OracleCanonicalizer()
    outcomes = apply_steps(steps, orc.register, orc.resolve,
                           lambda: [c["id"] for c in orc.collisions if c["status"] == "pending"])
    return orc, outcomes


# --- replay lookup oracle ---------------------------------------------------

def _dt(ts):
    return datetime.strptime(ts, "%Y%m%d%H%M%S")


def _nearest(rows, ts):
    at = _dt(ts)
    best = None
    for row in rows:
        key = (abs((_dt(row["timestamp"]) - at).total_seconds()), row["timestamp"])
        if best is None or key < best[0]:
            best = (key, row)
    return best[1] if best else None


def oracle_lookup(cdx_rows, timeline, target, ts):
    """Expected (timestamp, original) for a replay lookup by linear scans.

    ``cdx_rows`` are dicts with ``original`` and ``timestamp``; ``timeline``
    is the site's list of (root uri, first_seen) or None when unknown.
    """
    target = canonicalize_uri(target)

    def swap(uri, onion):
        host = uri.host
        old = ".".join(host.split(".")[-2:])
        return canonicalize_uri(str(uri).replace(host, host[: -len(old)] + onion, 1))

    def captures(uri):
        return [r for r in cdx_rows if canonicalize_uri(r["original"]) == uri]

    if timeline:
        era_root = timeline[0][0]
        for root, first in timeline:
            if first <= ts:
                era_root = root
        era = swap(target, _onion(era_root))
        if era != target:
            hit = _nearest(captures(era), ts)
            if hit:
                return hit["timestamp"], str(era)
    hit = _nearest(captures(target), ts)
    if hit:
        return hit["timestamp"], str(target)
    if timeline:
        best = None
        for root, _ in timeline:
            u = swap(target, _onion(root))
            h = _nearest(captures(u), ts)
            if h is None:
                continue
            key = (abs((_dt(h["timestamp"]) - _dt(ts)).total_seconds()), h["timestamp"])
            if best is None or key < best[0]:
                best = (key, (h["timestamp"], str(u)))
        if best:
            return best[1]
    return None
