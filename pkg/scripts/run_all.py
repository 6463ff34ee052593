"""Run every bundled config through the CLI into runs/<name>/ and print the summaries.

    python3 scripts/run_all.py [--jobs K] [--only planar,denoise]
"""

import argparse
from pathlib import Path

from contpose import cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--only", default="", help="comma-separated config names")
    ap.add_argument("--out", default=str(ROOT / "runs"))
    a = ap.parse_args()
    only = {s for s in a.only.split(",") if s}
    codes = {}
    for cfg in sorted((ROOT / "configs").glob("*.toml")):
        if only and cfg.stem not in only:
            continue
        codes[cfg.stem] = cli.main(["run", str(cfg), "--out", str(Path(a.out) / cfg.stem), "--jobs", str(a.jobs)])
    for name, code in codes.items():
        print(f"{name}: exit {code}")


if __name__ == "__main__":
    main()
