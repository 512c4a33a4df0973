#!/usr/bin/env python3
"""Run the acceptance criteria and print one PASS/FAIL line each.

    python scripts/run_acceptance.py            # all 14
    python scripts/run_acceptance.py 6 10 13    # a subset
    python scripts/run_acceptance.py --json out/acceptance.json
"""
import argparse
import json
import sys
import time

from vrbounds.acceptance import CRITERIA, run_all


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("numbers", type=int, nargs="*", help="criterion numbers (default: all)")
    ap.add_argument("--json", help="also write per-criterion metrics to this file")
    args = ap.parse_args(argv)
    unknown = set(args.numbers) - set(CRITERIA)
    if unknown:
        ap.error(f"unknown criteria: {sorted(unknown)}")

    t0 = time.perf_counter()
    results = run_all(args.numbers or None)
    for c in results:
        print(c.line())
    n_pass = sum(c.passed for c in results)
    print(f"{n_pass}/{len(results)} criteria passed in {time.perf_counter() - t0:.1f} s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({str(c.number): {"title": c.title, "passed": c.passed, "detail": c.detail,
                                       "metrics": c.metrics} for c in results},
                      fh, indent=2, sort_keys=True, default=float)
    return 0 if n_pass == len(results) else 1


if __name__ == "__main__":
    sys.exit(main())
