"""Crawl a simulated onion site before and after it changes address, then replay it.

Runs the bundled ``shift`` scenario and prints what each step saw: the two
crawls, which onion every capture came from, and how the replay service
answers a request for the new address at a time before the move.

    python demos/crawl_shift_replay.py [work_dir]
"""
import sys
from collections import Counter
from importlib import resources

from onionarchive.core import canonicalize_uri
from onionarchive.sim import run_scenario


def main(work_dir=None):
    path = resources.files("onionarchive.sim") / "scenarios" / "shift.json"
    report = run_scenario(str(path), work_dir)
    for crawl_id, crawl in report.crawls.items():
        hosts = Counter(canonicalize_uri(c[0]).host for c in crawl["captures"])
        print(f"crawl {crawl_id}: {crawl['captured']} captures, {crawl['shifted_targets']} targets moved to a "
              f"new onion, by host {dict(hosts)}")
    for a in report.assertions:
        if a.check == "resolve_via_era":
            print("lookup of the new address before the shift:")
            for step in a.evidence["trace"]:
                print("   ", step)
            print(f"  -> served {a.evidence['resolved_uri']} captured {a.evidence['capture']}")
    for a in report.assertions:
        print(f"{'ok  ' if a.passed else 'FAIL'} {a.check}")
    print(f"proxy saw {len(report.audit)} connects, {report.onion_lookups} local .onion lookups, "
          f"{report.elapsed_s:.1f}s")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1] if len(sys.argv) > 1 else None))
