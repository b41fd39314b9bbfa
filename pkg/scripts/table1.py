"""Encoder complexity table: relative MACs/pixel and weight size per width reduction r.

    python3 scripts/table1.py [--out results/table1]

Reference geometry N=128, M=192 (hyperprior side Nh=Mh=128). Writes one
complexity CSV per architecture.
"""

import argparse
from pathlib import Path

from kdlic.cli import cmd_analyze


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/table1")
    ap.add_argument("--N", type=int, default=128)
    ap.add_argument("--M", type=int, default=192)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for arch in ("factorized", "hyper"):
        cmd_analyze(arch, args.N, args.M, [1, 2, 4, 8], str(out / f"complexity_{arch}.csv"))
        print()


if __name__ == "__main__":
    main()
