"""Run the desk-scale acceptance experiments and print one line per criterion.

    python3 scripts/run_acceptance.py            # all criteria at desk settings
    python3 scripts/run_acceptance.py 1 3 9      # a subset
    python3 scripts/run_acceptance.py --nx 64 5  # cheaper grid where it applies
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from waveprobe.acceptance import CRITERIA

GRID_ARG = {2, 3, 4, 5, 6, 8, 9}


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("criteria", nargs="*", type=int, default=list(CRITERIA))
    ap.add_argument("--nx", type=int, help="grid size for criteria that take one")
    ap.add_argument("--json", type=Path, help="write measured values here")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    report, ok = {}, True
    for k in args.criteria:
        kw = {"nx": args.nx} if args.nx and k in GRID_ARG else {}
        if k == 7:
            kw["progress"] = print if args.verbose else None
        res = CRITERIA[k](**kw)
        print(res.line(), flush=True)
        ok &= res.passed
        report[k] = {"passed": res.passed, "seconds": res.seconds,
                     "checks": [c.__dict__ | {"passed": c.passed} for c in res.checks],
                     "info": _plain(res.info)}
    if args.json:
        args.json.write_text(json.dumps(report, indent=2, default=str))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
