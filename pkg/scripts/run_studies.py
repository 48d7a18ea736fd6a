"""Run (or resume) the desk-scale studies into ``results/<name>``.

Usage: python scripts/run_studies.py [name ...] [--results DIR]
Names: variance systematic gradient moments sensitivity (default: all).
"""

import argparse
import json
import time
from pathlib import Path

from stochhom.cookbook import PLANS
from stochhom.study import execute


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="*", default=list(PLANS))
    ap.add_argument("--results", default=str(Path(__file__).resolve().parents[1] / "results"))
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    for name in args.names:
        t0 = time.time()
        record = execute(PLANS[name](), Path(args.results) / name, args.workers,
                         progress=lambda msg, n=name: print(f"[{n}] {msg}", flush=True))
        print(f"[{name}] finished in {time.time() - t0:.0f}s", flush=True)
        print(json.dumps(record.slopes and {k: record.slopes[0][k] for k in ("quantity", "slope", "stderr", "status")}))


if __name__ == "__main__":
    main()
