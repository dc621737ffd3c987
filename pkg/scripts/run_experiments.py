"""Run the experiment grids in configs/ and print their summaries.

Usage: python scripts/run_experiments.py [--out out] [--only scaling ablate_fusion ...]

Each grid writes its CSV, summary JSON and manifest under <out>/<config name>.
Trained runs are shared across grids through <out>/runs (or $ZPRESS_CACHE).
"""

import argparse
import os
import sys
from pathlib import Path

from zpress.cli import cli_main

ROOT = Path(__file__).resolve().parents[1]
GRIDS = {
    "scaling": "scaling",
    "sweep": "sweep",
    "ablate_fusion": "ablate",
    "ablate_blocks": "ablate",
    "ablate_beta": "ablate",
    "strategies": "strategies",
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out")
    ap.add_argument("--only", nargs="*", choices=sorted(GRIDS))
    args = ap.parse_args()
    out = Path(args.out)
    os.environ.setdefault("ZPRESS_CACHE", str(out / "runs"))
    failed = []
    for name in args.only or GRIDS:
        print(f"== {name}", flush=True)
        code = cli_main([GRIDS[name], "--config", str(ROOT / "configs" / f"{name}.json"), "--out", str(out / name)])
        if code:
            failed.append(name)
    if failed:
        print("failed:", ", ".join(failed), file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
