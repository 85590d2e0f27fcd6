#!/usr/bin/env python3
"""Write seeded synthetic PAN/MS scenes and a matching experiment config.

    python3 scripts/make_fixture.py --out fixture --scenes 12 --size 64
"""

import argparse
import sys

from gradfuse import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="fixture")
    ap.add_argument("--scenes", type=int, default=12)
    ap.add_argument("--size", type=int, default=64, help="MS side in pixels")
    ap.add_argument("--bands", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    argv = ["synth", "--out", args.out, "--scenes", str(args.scenes), "--size", str(args.size)]
    argv += ["--bands", str(args.bands), "--seed", str(args.seed)]
    return cli.main(argv)


if __name__ == "__main__":
    sys.exit(main())
