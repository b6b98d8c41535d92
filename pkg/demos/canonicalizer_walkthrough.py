"""One site moving between onion addresses, seen through the canonicalizer service.

Starts a throwaway service, records a shift, a second directory's name for
the site and a conflicting sighting from a third directory, resolves the
conflict, then asks the three kinds of question the service
answers: current address, full timeline, and address at a past time.

    python demos/canonicalizer_walkthrough.py
"""
import json
import tempfile

from onionarchive import service
from onionarchive.canonicalizer import Observation

OLD = "http://bfnews3u2ox4m4ty.onion/"
NEW = "http://nytimes3xbfgragh.onion/"
LATEST = "http://zqktlwi4fecvo6ri.onion/"


def show(title, obj):
    print(f"-- {title}")
    print(json.dumps(obj, indent=2))


def main():
    with tempfile.TemporaryDirectory() as data:
        svc = service.serve(data)
        client = service.CanonClient(svc.url)
        try:
            show("first sighting", client.observe(Observation(OLD, "github", "Buzzfeed News", "20170101000000")))
            show("same alias, new onion", client.observe(Observation(NEW, "github", "Buzzfeed News", "20170601000000")))
            show("new onion under another directory's name", client.observe(
                Observation(NEW, "wiki", "BuzzFeed", "20170615000000")))
            # same alias text from a third source, pointing somewhere new: needs a human
            clash = client.observe(Observation(LATEST, "ahmia", "Buzzfeed News", "20170701000000"))
            show("same alias from another source, different onion", clash)
            show("pending", client.pending())
            show("resolved", client.resolve(clash["collision_id"], "merge_into", clash["candidate_sites"][0]))

            site_id, current = client.current_uri(OLD)
            print(f"-- current address of {OLD}: {current} ({site_id})")
            show("timeline", client.site_for(LATEST).to_json())
            for ts in ("20170301000000", "20170801000000"):
                print(f"-- address in use at {ts}: {client.uri_at(NEW, ts)}")
        finally:
            svc.close()


if __name__ == "__main__":
    main()
