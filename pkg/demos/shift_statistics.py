"""Feed two synthetic onion-list histories through the canonicalizer.

Prints how many sites ended up with more than one onion address.

    python demos/shift_statistics.py
"""
from onionarchive.sim.fixtures import fifteen_month_fixture, twenty_four_month_fixture


def main():
    for label, make in [("15 months", fifteen_month_fixture), ("24 months", twenty_four_month_fixture)]:
        hist = make()
        result = hist.run()
        print(f"{label}: {len(hist.snapshots)} list snapshots, {result['sites']} sites, "
              f"{result['multi_entry']} shifted ({result['fraction']:.2%})")
        print(f"  outcomes: {result['outcomes']}")
        print(f"  rows skipped as non-onion or malformed: {result['skipped_rows']}, "
              f"aliases dropped from the list: {result['removed']}")


if __name__ == "__main__":
    main()
